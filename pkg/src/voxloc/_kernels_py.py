"""Pure-Python octree and flat radius-search kernels.

Fallback used when the compiled extension (voxloc._kernels) is not built.
Semantics are identical: same first-wins grid downsampling, same strict
``distance < r`` search, same ball/box pruning with bulk reporting of
octants wholly inside the query ball. Only the speed differs; see
``voxloc bench-kernels`` for the comparison.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


class OctreeCore:
    """Incremental octree over a fixed axis-aligned box.

    The root octant is the cube centred on the box with half-extent
    max(extent)/2; callers are responsible for only inserting points inside
    the box. The downsample grid (cell side ``min_extent``) is anchored at
    the box minimum corner; the first point seen in a cell is retained and
    later ones are dropped.
    """

    __slots__ = (
        "_bmin",
        "_bmax",
        "_min_extent",
        "_bucket",
        "_ncx",
        "_ncy",
        "_ncz",
        "_nhalf",
        "_child0",
        "_leaf_pts",
        "_px",
        "_py",
        "_pz",
        "_cells",
    )

    def __init__(self, bounds_min, bounds_max, min_extent, bucket_size):
        bmin = np.asarray(bounds_min, dtype=np.float64).reshape(3)
        bmax = np.asarray(bounds_max, dtype=np.float64).reshape(3)
        extent = bmax - bmin
        if np.max(extent) / min_extent >= 2 ** 20:
            raise ValueError("bounds too large for min_extent grid")
        self._bmin = bmin
        self._bmax = bmax
        self._min_extent = float(min_extent)
        self._bucket = int(bucket_size)
        centre = 0.5 * (bmin + bmax)
        half = 0.5 * float(np.max(extent))
        self._ncx = [centre[0]]
        self._ncy = [centre[1]]
        self._ncz = [centre[2]]
        self._nhalf = [half]
        self._child0 = [-1]
        self._leaf_pts: list[list[int] | None] = [[]]
        self._px: list[float] = []
        self._py: list[float] = []
        self._pz: list[float] = []
        self._cells: set[tuple[int, int, int]] = set()

    @property
    def size(self) -> int:
        return len(self._px)

    def node_count(self) -> int:
        return len(self._ncx)

    def _octant(self, x, y, z, node) -> int:
        return (
            (4 if x > self._ncx[node] else 0)
            + (2 if y > self._ncy[node] else 0)
            + (1 if z > self._ncz[node] else 0)
        )

    def _split(self, node):
        stack = [node]
        while stack:
            n = stack.pop()
            if len(self._leaf_pts[n]) <= self._bucket or self._nhalf[n] <= self._min_extent:
                continue
            c0 = len(self._ncx)
            self._child0[n] = c0
            h = self._nhalf[n] * 0.5
            cx, cy, cz = self._ncx[n], self._ncy[n], self._ncz[n]
            for i in range(8):
                self._ncx.append(cx + (h if i & 4 else -h))
                self._ncy.append(cy + (h if i & 2 else -h))
                self._ncz.append(cz + (h if i & 1 else -h))
                self._nhalf.append(h)
                self._child0.append(-1)
                self._leaf_pts.append([])
            for p in self._leaf_pts[n]:
                ch = c0 + self._octant(self._px[p], self._py[p], self._pz[p], n)
                self._leaf_pts[ch].append(p)
            self._leaf_pts[n] = None
            for i in range(8):
                stack.append(c0 + i)

    def insert(self, pts) -> np.ndarray:
        """Insert a batch; returns positions (into the batch) retained."""
        pts = np.ascontiguousarray(pts, dtype=np.float64)
        if pts.size == 0:
            return np.empty(0, dtype=np.int64)
        cells = np.floor((pts - self._bmin) / self._min_extent).astype(np.int64)
        retained = []
        me = self._min_extent
        bucket = self._bucket
        for k in range(pts.shape[0]):
            cell = (cells[k, 0], cells[k, 1], cells[k, 2])
            if cell in self._cells:
                continue
            self._cells.add(cell)
            x, y, z = pts[k]
            pidx = len(self._px)
            self._px.append(x)
            self._py.append(y)
            self._pz.append(z)
            node = 0
            while self._child0[node] >= 0:
                node = self._child0[node] + self._octant(x, y, z, node)
            self._leaf_pts[node].append(pidx)
            retained.append(k)
            if len(self._leaf_pts[node]) > bucket and self._nhalf[node] > me:
                self._split(node)
        return np.asarray(retained, dtype=np.int64)

    def _collect(self, node, out):
        stack = [node]
        while stack:
            n = stack.pop()
            c0 = self._child0[n]
            if c0 < 0:
                out.extend(self._leaf_pts[n])
            else:
                stack.extend(range(c0, c0 + 8))

    def radius_search(self, qx, qy, qz, r) -> np.ndarray:
        """Indices of retained points with strict distance < r from q."""
        out: list[int] = []
        r2 = r * r
        stack = [0]
        px, py, pz = self._px, self._py, self._pz
        while stack:
            n = stack.pop()
            ax = abs(qx - self._ncx[n])
            ay = abs(qy - self._ncy[n])
            az = abs(qz - self._ncz[n])
            h = self._nhalf[n]
            dx = max(ax - h, 0.0)
            dy = max(ay - h, 0.0)
            dz = max(az - h, 0.0)
            if dx * dx + dy * dy + dz * dz >= r2:
                continue
            fx, fy, fz = ax + h, ay + h, az + h
            if fx * fx + fy * fy + fz * fz < r2:
                self._collect(n, out)
                continue
            c0 = self._child0[n]
            if c0 < 0:
                for p in self._leaf_pts[n]:
                    ex = px[p] - qx
                    ey = py[p] - qy
                    ez = pz[p] - qz
                    if ex * ex + ey * ey + ez * ez < r2:
                        out.append(p)
            else:
                stack.extend(range(c0, c0 + 8))
        return np.asarray(out, dtype=np.int64)

    def radius_search_batch(self, queries, r):
        """Batch search; returns (offsets (Q+1,), indices) flat layout."""
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        nq = queries.shape[0]
        offsets = np.zeros(nq + 1, dtype=np.int64)
        chunks = []
        total = 0
        for i in range(nq):
            idx = self.radius_search(queries[i, 0], queries[i, 1], queries[i, 2], r)
            total += idx.size
            offsets[i + 1] = total
            chunks.append(idx)
        if chunks:
            indices = np.concatenate(chunks)
        else:
            indices = np.empty(0, dtype=np.int64)
        return offsets, indices

    def points_array(self) -> np.ndarray:
        out = np.empty((len(self._px), 3), dtype=np.float64)
        out[:, 0] = self._px
        out[:, 1] = self._py
        out[:, 2] = self._pz
        return out


def radius_search_flat(points, qx, qy, qz, r) -> np.ndarray:
    """Linear-scan radius search over a flat (N, 3) array (strict <)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.empty(0, dtype=np.int64)
    d2 = (pts[:, 0] - qx) ** 2 + (pts[:, 1] - qy) ** 2 + (pts[:, 2] - qz) ** 2
    return np.nonzero(d2 < r * r)[0].astype(np.int64)


def radius_search_flat_batch(points, queries, r):
    """Batched linear scan; same flat (offsets, indices) layout as the tree."""
    queries = np.asarray(queries, dtype=np.float64)
    nq = queries.shape[0]
    offsets = np.zeros(nq + 1, dtype=np.int64)
    chunks = []
    total = 0
    for i in range(nq):
        idx = radius_search_flat(points, queries[i, 0], queries[i, 1], queries[i, 2], r)
        total += idx.size
        offsets[i + 1] = total
        chunks.append(idx)
    indices = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    return offsets, indices
