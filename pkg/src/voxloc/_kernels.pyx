# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled octree and flat radius-search kernels.

Same contract as voxloc._kernels_py (the pure-Python fallback): first-wins
grid downsampling anchored at the bounding-box minimum corner, strict
``distance < r`` radius search, ball/box pruning with bulk reporting of
octants wholly inside the query ball.
"""

from libcpp.vector cimport vector
from libcpp.unordered_set cimport unordered_set
from libc.stdint cimport int32_t, int64_t
from libc.math cimport floor, fabs

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"

cdef int64_t CELL_OFF = 1048576  # 2^20; grid indices must stay within +-2^20


cdef inline int64_t _pack_cell(int64_t cx, int64_t cy, int64_t cz) nogil:
    return ((cx + CELL_OFF) << 42) | ((cy + CELL_OFF) << 21) | (cz + CELL_OFF)


cdef class OctreeCore:
    """Incremental octree over a fixed axis-aligned box (no delete)."""

    cdef double bmin_x, bmin_y, bmin_z
    cdef double bmax_x, bmax_y, bmax_z
    cdef double min_extent
    cdef int bucket
    # node storage (struct of arrays); child0 < 0 marks a leaf
    cdef vector[double] ncx, ncy, ncz, nhalf
    cdef vector[int32_t] child0
    cdef vector[int32_t] head      # first point index of a leaf's list, -1 if empty
    cdef vector[int32_t] lcount    # points in a leaf
    # point storage, linked per leaf through nxt
    cdef vector[double] px, py, pz
    cdef vector[int32_t] nxt
    cdef unordered_set[int64_t] cells

    def __init__(self, bounds_min, bounds_max, double min_extent, int bucket_size):
        bmin = np.asarray(bounds_min, dtype=np.float64).reshape(3)
        bmax = np.asarray(bounds_max, dtype=np.float64).reshape(3)
        extent = bmax - bmin
        if float(np.max(extent)) / min_extent >= 2 ** 20:
            raise ValueError("bounds too large for min_extent grid")
        self.bmin_x, self.bmin_y, self.bmin_z = bmin
        self.bmax_x, self.bmax_y, self.bmax_z = bmax
        self.min_extent = min_extent
        self.bucket = bucket_size
        cdef double half = 0.5 * float(np.max(extent))
        self.ncx.push_back(0.5 * (self.bmin_x + self.bmax_x))
        self.ncy.push_back(0.5 * (self.bmin_y + self.bmax_y))
        self.ncz.push_back(0.5 * (self.bmin_z + self.bmax_z))
        self.nhalf.push_back(half)
        self.child0.push_back(-1)
        self.head.push_back(-1)
        self.lcount.push_back(0)

    @property
    def size(self):
        return self.px.size()

    def node_count(self):
        return self.ncx.size()

    cdef inline int _octant(self, double x, double y, double z, int node) nogil:
        cdef int o = 0
        if x > self.ncx[node]:
            o += 4
        if y > self.ncy[node]:
            o += 2
        if z > self.ncz[node]:
            o += 1
        return o

    cdef void _split(self, int node) nogil:
        cdef vector[int32_t] stack
        cdef int n, c0, i, ch
        cdef int32_t p, nx
        cdef double h, cx, cy, cz
        stack.push_back(node)
        while stack.size() > 0:
            n = stack.back()
            stack.pop_back()
            if self.lcount[n] <= self.bucket or self.nhalf[n] <= self.min_extent:
                continue
            c0 = <int> self.ncx.size()
            self.child0[n] = c0
            h = self.nhalf[n] * 0.5
            cx = self.ncx[n]
            cy = self.ncy[n]
            cz = self.ncz[n]
            for i in range(8):
                self.ncx.push_back(cx + (h if i & 4 else -h))
                self.ncy.push_back(cy + (h if i & 2 else -h))
                self.ncz.push_back(cz + (h if i & 1 else -h))
                self.nhalf.push_back(h)
                self.child0.push_back(-1)
                self.head.push_back(-1)
                self.lcount.push_back(0)
            p = self.head[n]
            while p != -1:
                nx = self.nxt[p]
                ch = c0 + self._octant(self.px[p], self.py[p], self.pz[p], n)
                self.nxt[p] = self.head[ch]
                self.head[ch] = p
                self.lcount[ch] += 1
                p = nx
            self.head[n] = -1
            self.lcount[n] = 0
            for i in range(8):
                stack.push_back(c0 + i)

    def insert(self, pts):
        """Insert a batch; returns positions (into the batch) retained."""
        cdef cnp.ndarray[cnp.float64_t, ndim=2] arr = np.ascontiguousarray(
            pts, dtype=np.float64)
        cdef Py_ssize_t n = arr.shape[0]
        if n == 0:
            return np.empty(0, dtype=np.int64)
        cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
        cdef Py_ssize_t k
        cdef Py_ssize_t nkept = 0
        cdef double x, y, z, inv = 1.0 / self.min_extent
        cdef int64_t cell
        cdef int node
        cdef int32_t pidx
        for k in range(n):
            x = arr[k, 0]
            y = arr[k, 1]
            z = arr[k, 2]
            cell = _pack_cell(
                <int64_t> floor((x - self.bmin_x) * inv),
                <int64_t> floor((y - self.bmin_y) * inv),
                <int64_t> floor((z - self.bmin_z) * inv),
            )
            if self.cells.count(cell):
                continue
            self.cells.insert(cell)
            pidx = <int32_t> self.px.size()
            self.px.push_back(x)
            self.py.push_back(y)
            self.pz.push_back(z)
            self.nxt.push_back(-1)
            node = 0
            while self.child0[node] >= 0:
                node = self.child0[node] + self._octant(x, y, z, node)
            self.nxt[pidx] = self.head[node]
            self.head[node] = pidx
            self.lcount[node] += 1
            out[nkept] = k
            nkept += 1
            if self.lcount[node] > self.bucket and self.nhalf[node] > self.min_extent:
                self._split(node)
        return out[:nkept].copy()

    cdef void _collect(self, int node, vector[int64_t]* out) nogil:
        cdef vector[int32_t] stack
        cdef int n, c0, i
        cdef int32_t p
        stack.push_back(node)
        while stack.size() > 0:
            n = stack.back()
            stack.pop_back()
            c0 = self.child0[n]
            if c0 < 0:
                p = self.head[n]
                while p != -1:
                    out.push_back(p)
                    p = self.nxt[p]
            else:
                for i in range(8):
                    stack.push_back(c0 + i)

    cdef void _search(self, double qx, double qy, double qz, double r2,
                      vector[int64_t]* out) nogil:
        cdef vector[int32_t] stack
        cdef int n, c0, i
        cdef int32_t p
        cdef double ax, ay, az, h, dx, dy, dz, fx, fy, fz, ex, ey, ez
        stack.push_back(0)
        while stack.size() > 0:
            n = stack.back()
            stack.pop_back()
            ax = fabs(qx - self.ncx[n])
            ay = fabs(qy - self.ncy[n])
            az = fabs(qz - self.ncz[n])
            h = self.nhalf[n]
            dx = ax - h
            dy = ay - h
            dz = az - h
            if dx < 0:
                dx = 0
            if dy < 0:
                dy = 0
            if dz < 0:
                dz = 0
            if dx * dx + dy * dy + dz * dz >= r2:
                continue
            fx = ax + h
            fy = ay + h
            fz = az + h
            if fx * fx + fy * fy + fz * fz < r2:
                self._collect(n, out)
                continue
            c0 = self.child0[n]
            if c0 < 0:
                p = self.head[n]
                while p != -1:
                    ex = self.px[p] - qx
                    ey = self.py[p] - qy
                    ez = self.pz[p] - qz
                    if ex * ex + ey * ey + ez * ez < r2:
                        out.push_back(p)
                    p = self.nxt[p]
            else:
                for i in range(8):
                    stack.push_back(c0 + i)

    def radius_search(self, double qx, double qy, double qz, double r):
        """Indices of retained points with strict distance < r from q."""
        cdef vector[int64_t] found
        self._search(qx, qy, qz, r * r, &found)
        cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(found.size(), dtype=np.int64)
        cdef Py_ssize_t i
        for i in range(<Py_ssize_t> found.size()):
            out[i] = found[i]
        return out

    def radius_search_batch(self, queries, double r):
        """Batch search; returns (offsets (Q+1,), indices) flat layout."""
        cdef cnp.ndarray[cnp.float64_t, ndim=2] qs = np.ascontiguousarray(
            queries, dtype=np.float64)
        cdef Py_ssize_t nq = qs.shape[0]
        cdef cnp.ndarray[cnp.int64_t, ndim=1] offsets = np.zeros(nq + 1, dtype=np.int64)
        cdef vector[int64_t] found
        cdef double r2 = r * r
        cdef Py_ssize_t i
        for i in range(nq):
            self._search(qs[i, 0], qs[i, 1], qs[i, 2], r2, &found)
            offsets[i + 1] = found.size()
        cdef cnp.ndarray[cnp.int64_t, ndim=1] indices = np.empty(found.size(), dtype=np.int64)
        for i in range(<Py_ssize_t> found.size()):
            indices[i] = found[i]
        return offsets, indices

    def points_array(self):
        cdef Py_ssize_t n = self.px.size()
        cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, 3), dtype=np.float64)
        cdef Py_ssize_t i
        for i in range(n):
            out[i, 0] = self.px[i]
            out[i, 1] = self.py[i]
            out[i, 2] = self.pz[i]
        return out


def radius_search_flat(points, double qx, double qy, double qz, double r):
    """Linear-scan radius search over a flat (N, 3) array (strict <)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.ascontiguousarray(
        points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef vector[int64_t] found
    cdef double r2 = r * r
    cdef double ex, ey, ez
    cdef Py_ssize_t i
    for i in range(n):
        ex = pts[i, 0] - qx
        ey = pts[i, 1] - qy
        ez = pts[i, 2] - qz
        if ex * ex + ey * ey + ez * ez < r2:
            found.push_back(i)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(found.size(), dtype=np.int64)
    for i in range(<Py_ssize_t> found.size()):
        out[i] = found[i]
    return out


def radius_search_flat_batch(points, queries, double r):
    """Batched linear scan; same flat (offsets, indices) layout as the tree."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.ascontiguousarray(
        points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] qs = np.ascontiguousarray(
        queries, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t nq = qs.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offsets = np.zeros(nq + 1, dtype=np.int64)
    cdef vector[int64_t] found
    cdef double r2 = r * r
    cdef double qx, qy, qz, ex, ey, ez
    cdef Py_ssize_t i, j
    for j in range(nq):
        qx = qs[j, 0]
        qy = qs[j, 1]
        qz = qs[j, 2]
        for i in range(n):
            ex = pts[i, 0] - qx
            ey = pts[i, 1] - qy
            ez = pts[i, 2] - qz
            if ex * ex + ey * ey + ez * ez < r2:
                found.push_back(i)
        offsets[j + 1] = found.size()
    cdef cnp.ndarray[cnp.int64_t, ndim=1] indices = np.empty(found.size(), dtype=np.int64)
    for i in range(<Py_ssize_t> found.size()):
        indices[i] = found[i]
    return offsets, indices
