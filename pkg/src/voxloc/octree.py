"""Per-voxel-block incremental octree.

Fixed bounding box (no root expansion), insert with first-wins grid
downsampling, no delete, and pruned strict-inequality radius search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import as_points


class InvalidBounds(ValueError):
    """Raised when a bounding box has a non-positive extent."""


class OutOfBounds(ValueError):
    """Raised when an inserted point lies outside the fixed bounds.

    This signals a routing bug upstream: the voxel map is responsible for
    sending each point to the block that contains it.
    """


@dataclass(frozen=True)
class OctreeConfig:
    min_extent: float = 0.1
    bucket_size: int = 32

    def __post_init__(self):
        if self.min_extent <= 0:
            raise ValueError("min_extent must be > 0")
        if self.bucket_size < 1:
            raise ValueError("bucket_size must be >= 1")


class IOctree:
    """Incremental octree with a fixed axis-aligned bounding box.

    Points must lie inside ``[bounds_min, bounds_max)``. Insertion keeps at
    most one point per ``min_extent`` grid cell (grid anchored at
    bounds_min; the first point wins). Radius search returns exactly the
    retained points with strict distance < r; octants wholly outside the
    query ball are pruned and octants wholly inside are reported without
    per-point distance tests.
    """

    def __init__(self, bounds_min, bounds_max, config: OctreeConfig | None = None,
                 backend=None):
        config = config or OctreeConfig()
        bmin = np.asarray(bounds_min, dtype=np.float64).reshape(3).copy()
        bmax = np.asarray(bounds_max, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(bmin)) and np.all(np.isfinite(bmax))):
            raise InvalidBounds("bounds must be finite")
        if np.any(bmax - bmin <= 0):
            raise InvalidBounds(f"non-positive extent: {bmin} .. {bmax}")
        self._bmin = bmin
        self._bmax = bmax
        self._bmin.flags.writeable = False
        self._bmax.flags.writeable = False
        self.config = config
        core_cls = backend.OctreeCore if backend is not None else kernels.OctreeCore
        self._core = core_cls(bmin, bmax, config.min_extent, config.bucket_size)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self._bmin, self._bmax

    @property
    def size(self) -> int:
        return int(self._core.size)

    def insert_indices(self, points) -> np.ndarray:
        """Insert a batch, returning positions (into the batch) retained."""
        pts = as_points(points)
        if pts.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        inside = np.all((pts >= self._bmin) & (pts < self._bmax), axis=1)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise OutOfBounds(f"point {bad} outside bounds {self._bmin}..{self._bmax}")
        return self._core.insert(pts)

    def insert(self, points) -> int:
        """Insert a batch of points; returns how many were retained."""
        return int(self.insert_indices(points).size)

    def radius_search_indices(self, query, r: float) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).reshape(3)
        return self._core.radius_search(q[0], q[1], q[2], float(r))

    def radius_search(self, query, r: float) -> np.ndarray:
        """All retained points strictly within distance r of the query."""
        idx = self.radius_search_indices(query, r)
        return self.points()[idx]

    def radius_search_batch_indices(self, queries, r: float):
        """Batched search; returns (offsets (Q+1,), flat indices)."""
        qs = as_points(queries)
        return self._core.radius_search_batch(qs, float(r))

    def points(self) -> np.ndarray:
        """Retained points in insertion order, shape (size, 3)."""
        return self._core.points_array()
