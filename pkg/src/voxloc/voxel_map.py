"""Hash-indexed voxel map with three point tiers per block.

The global map is a hash table from integer voxel indices to blocks. Each
block holds prior points (loaded at startup), temporary points (buffered
unmatched scan points awaiting promotion), and static points (prior plus
promoted temporaries) with an incremental octree over the static tier for
radius neighbor search.

Blocks are identified by their full integer index triple; the XOR prime
hash (``voxel_hash``) is the stable, portable bucket key for fixed-width
layouts, while the in-memory table delegates bucketing to the runtime dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import MAP_FRAME, Scan, as_points
from .kernels import radius_search_flat_batch
from .octree import IOctree, OctreeConfig

HASH_PRIMES = (73856093, 19349669, 83492791)

_U64 = (1 << 64) - 1
_PACK_OFF = 1 << 20  # packable block-index range: |index| < 2^20

TIER_PRIOR = 0
TIER_PROMOTED = 1


class EmptyCloud(ValueError):
    """Raised when a prior map is loaded from an empty cloud."""


def voxel_index(point, s: float) -> tuple[int, int, int]:
    """Voxel block index of a point: component-wise floor(p / s)."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    ix = np.floor(p / s).astype(np.int64)
    return int(ix[0]), int(ix[1]), int(ix[2])


def voxel_indices(points, s: float) -> np.ndarray:
    """Vectorized voxel_index: (N, 3) points -> (N, 3) int64 indices."""
    pts = as_points(points)
    return np.floor(pts / s).astype(np.int64)


def voxel_hash(index, primes=HASH_PRIMES) -> int:
    """XOR prime hash of a voxel index.

    Each signed index is reinterpreted as an unsigned 64-bit integer
    (two's complement) and multiplied by its prime with wrapping, so the
    value is well-defined for negative indices and identical across
    platforms.
    """
    bx, by, bz = (int(v) for v in index)
    hx = ((bx & _U64) * primes[0]) & _U64
    hy = ((by & _U64) * primes[1]) & _U64
    hz = ((bz & _U64) * primes[2]) & _U64
    return hx ^ hy ^ hz


def pack_index(index) -> int:
    """Bijective packing of a block index triple into one int64 key."""
    bx, by, bz = (int(v) for v in index)
    if max(abs(bx), abs(by), abs(bz)) >= _PACK_OFF:
        raise OverflowError(f"voxel index {index} outside packable range")
    return ((bx + _PACK_OFF) << 42) | ((by + _PACK_OFF) << 21) | (bz + _PACK_OFF)


def pack_indices(ix: np.ndarray) -> np.ndarray:
    """Vectorized pack_index for an (N, 3) int64 index array."""
    if ix.size and np.max(np.abs(ix)) >= _PACK_OFF:
        raise OverflowError("voxel index outside packable range")
    return ((ix[:, 0] + _PACK_OFF) << 42) | ((ix[:, 1] + _PACK_OFF) << 21) | (ix[:, 2] + _PACK_OFF)


def unpack_index(key: int) -> tuple[int, int, int]:
    mask = (1 << 21) - 1
    return (
        int((key >> 42) & mask) - _PACK_OFF,
        int((key >> 21) & mask) - _PACK_OFF,
        int(key & mask) - _PACK_OFF,
    )


@dataclass(frozen=True)
class MapConfig:
    """Geometry and policy parameters of the voxel map."""

    resolution: float = 5.0
    hash_primes: tuple[int, int, int] = HASH_PRIMES
    octree: OctreeConfig = field(default_factory=OctreeConfig)
    promote_threshold: int = 100
    match_radius: float = 0.5
    match_min_neighbors: int = 5
    match_max_distance: float = 0.3

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.promote_threshold < 1:
            raise ValueError("promote_threshold must be >= 1")


@dataclass(frozen=True)
class TierFilter:
    """Which map tiers a search admits, with the weight attached to each.

    ``None`` means the tier is not admitted. Static-tier points carry a
    per-point provenance tag (prior vs promoted); inside prior blocks the
    two tags can be weighted independently, outside prior blocks all
    static points share ``static_outside``.
    """

    prior: float | None = None
    promoted_in_prior: float | None = None
    static_outside: float | None = None
    temporary: float | None = None

    @staticmethod
    def static_all(weight: float = 1.0) -> "TierFilter":
        """Admit the whole static tier everywhere (match classification)."""
        return TierFilter(prior=weight, promoted_in_prior=weight,
                          static_outside=weight)


class VoxelBlock:
    """One voxel cell: three point tiers plus the static-tier octree.

    The octree holds the downsampled image of the static tier; the parallel
    ``tree_tier`` array tags each retained tree point with its provenance
    (TIER_PRIOR or TIER_PROMOTED). Temporary points are kept as plain
    arrays and searched by linear scan (they stay small by construction).
    """

    __slots__ = (
        "index",
        "is_prior_block",
        "prior",
        "_promoted_chunks",
        "_temp_chunks",
        "temp_count",
        "tree",
        "tree_points",
        "tree_tier",
        "_temp_cache",
        "_config",
    )

    def __init__(self, index: tuple[int, int, int], config: MapConfig):
        self.index = index
        self._config = config
        self.is_prior_block = False
        self.prior = np.empty((0, 3))
        self._promoted_chunks: list[np.ndarray] = []
        self._temp_chunks: list[np.ndarray] = []
        self.temp_count = 0
        self.tree: IOctree | None = None
        self.tree_points = np.empty((0, 3))
        self.tree_tier = np.empty(0, dtype=np.uint8)
        self._temp_cache: np.ndarray | None = None

    @property
    def prior_count(self) -> int:
        return self.prior.shape[0]

    @property
    def static_count(self) -> int:
        return self.prior.shape[0] + sum(c.shape[0] for c in self._promoted_chunks)

    def static_points(self) -> np.ndarray:
        chunks = ([self.prior] if self.prior.size else []) + self._promoted_chunks
        if not chunks:
            return np.empty((0, 3))
        return np.concatenate(chunks, axis=0)

    def temp_points(self) -> np.ndarray:
        if self._temp_cache is None:
            if self._temp_chunks:
                self._temp_cache = np.concatenate(self._temp_chunks, axis=0)
            else:
                self._temp_cache = np.empty((0, 3))
        return self._temp_cache

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        s = self._config.resolution
        lo = np.array(self.index, dtype=np.float64) * s
        return lo, lo + s

    def _ensure_tree(self) -> IOctree:
        if self.tree is None:
            lo, hi = self.bounds()
            self.tree = IOctree(lo, hi, self._config.octree)
        return self.tree

    def _insert_static_tree(self, points: np.ndarray, tier: int):
        tree = self._ensure_tree()
        kept = tree.insert_indices(points)
        if kept.size:
            self.tree_points = np.concatenate([self.tree_points, points[kept]], axis=0)
            self.tree_tier = np.concatenate(
                [self.tree_tier, np.full(kept.size, tier, dtype=np.uint8)])

    def add_prior(self, points: np.ndarray):
        points = as_points(points)
        self.prior = np.concatenate([self.prior, points], axis=0) if self.prior.size else points
        self.is_prior_block = True
        self._insert_static_tree(points, TIER_PRIOR)

    def add_temp(self, points: np.ndarray):
        points = as_points(points)
        self._temp_chunks.append(points)
        self.temp_count += points.shape[0]
        self._temp_cache = None

    def take_temp(self) -> np.ndarray:
        """Remove and return all temporary points."""
        pts = self.temp_points()
        self._temp_chunks = []
        self.temp_count = 0
        self._temp_cache = None
        return pts

    def promote(self, points: np.ndarray):
        """Move already-taken temporary points into the static tier."""
        self._promoted_chunks.append(points)
        self._insert_static_tree(points, TIER_PROMOTED)

    def demote(self, promoted: np.ndarray):
        """Drop the prior tier and rebuild the static tier from ``promoted``.

        Applied when a promotion made the static tier more than twice the
        prior tier: the prior content of this block is deemed unreliable.
        Prior status is never regained.
        """
        self.prior = np.empty((0, 3))
        self.is_prior_block = False
        self._promoted_chunks = [promoted]
        self.rebuild_tree()

    def rebuild_tree(self):
        """Rebuild the octree (and its caches) from the current static tier."""
        lo, hi = self.bounds()
        self.tree = IOctree(lo, hi, self._config.octree)
        self.tree_points = np.empty((0, 3))
        self.tree_tier = np.empty(0, dtype=np.uint8)
        if self.prior.size:
            self._insert_static_tree(self.prior, TIER_PRIOR)
        for chunk in self._promoted_chunks:
            self._insert_static_tree(chunk, TIER_PROMOTED)


class VoxelMap:
    """The global map: voxel index -> VoxelBlock.

    Mutations (loading, temporary inserts, promotion) require exclusive
    access; radius searches are read-only and may run concurrently.
    """

    def __init__(self, config: MapConfig | None = None):
        self.config = config or MapConfig()
        self.blocks: dict[tuple[int, int, int], VoxelBlock] = {}
        self._prior_packed = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.blocks)

    def block(self, index) -> VoxelBlock | None:
        return self.blocks.get(tuple(index))

    def _get_or_create(self, index: tuple[int, int, int]) -> VoxelBlock:
        blk = self.blocks.get(index)
        if blk is None:
            blk = VoxelBlock(index, self.config)
            self.blocks[index] = blk
        return blk

    def prior_block_indices(self) -> set[tuple[int, int, int]]:
        return {idx for idx, blk in self.blocks.items() if blk.is_prior_block}

    def refresh_prior_membership(self):
        """Recompute the packed prior-block key table (after load/demote)."""
        keys = [pack_index(idx) for idx, blk in self.blocks.items() if blk.is_prior_block]
        self._prior_packed = np.sort(np.asarray(keys, dtype=np.int64))

    def is_prior_block(self, index) -> bool:
        blk = self.blocks.get(tuple(index))
        return blk is not None and blk.is_prior_block

    def count_in_prior_blocks(self, points) -> int:
        """Number of points whose voxel index lies in a prior block."""
        pts = as_points(points)
        if pts.shape[0] == 0 or self._prior_packed.size == 0:
            return 0
        keys = pack_indices(voxel_indices(pts, self.config.resolution))
        pos = np.searchsorted(self._prior_packed, keys)
        pos = np.clip(pos, 0, self._prior_packed.size - 1)
        return int(np.count_nonzero(self._prior_packed[pos] == keys))

    def _group_by_block(self, points: np.ndarray):
        """Yield (block index tuple, row positions) for a point batch."""
        ix = voxel_indices(points, self.config.resolution)
        keys = pack_indices(ix)
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        boundaries = np.nonzero(np.diff(sorted_keys))[0] + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [keys.size]])
        for a, b in zip(starts, ends):
            rows = order[a:b]
            yield unpack_index(int(sorted_keys[a])), rows

    def load_prior_map(self, cloud: Scan) -> int:
        """Route a prior cloud into blocks (prior + static tiers).

        Returns the number of blocks created. Every touched block is marked
        a prior block and its octree is built from the static tier.
        """
        if cloud.frame != MAP_FRAME:
            raise ValueError("prior map cloud must be in the map frame")
        pts = cloud.points
        if pts.shape[0] == 0:
            raise EmptyCloud("prior map cloud is empty")
        created = 0
        for index, rows in self._group_by_block(pts):
            blk = self.blocks.get(index)
            if blk is None:
                blk = self._get_or_create(index)
                created += 1
            blk.add_prior(pts[rows])
        self.refresh_prior_membership()
        return created

    def insert_temporary(self, points):
        """Buffer points in the temporary tier of their owning blocks.

        Blocks are created on demand (not as prior blocks); the static tier
        and octrees are untouched.
        """
        pts = as_points(points)
        if pts.shape[0] == 0:
            return
        for index, rows in self._group_by_block(pts):
            self._get_or_create(index).add_temp(pts[rows])

    def _blocks_overlapping(self, queries: np.ndarray, r: float):
        """Group queries by the blocks their search balls overlap.

        Returns a list of (block index, query row positions). Covers
        ceil(r/s) shells per axis, exactly the blocks whose cube intersects
        each query's ball bounding box.
        """
        s = self.config.resolution
        lo = np.floor((queries - r) / s).astype(np.int64)
        hi = np.floor((queries + r) / s).astype(np.int64)
        spans = hi - lo
        max_span = spans.max(axis=0) if queries.size else np.zeros(3, dtype=np.int64)
        key_chunks = []
        qid_chunks = []
        for dx in range(int(max_span[0]) + 1):
            for dy in range(int(max_span[1]) + 1):
                for dz in range(int(max_span[2]) + 1):
                    mask = (spans[:, 0] >= dx) & (spans[:, 1] >= dy) & (spans[:, 2] >= dz)
                    if not mask.any():
                        continue
                    ix = lo[mask] + np.array([dx, dy, dz], dtype=np.int64)
                    key_chunks.append(pack_indices(ix))
                    qid_chunks.append(np.nonzero(mask)[0])
        if not key_chunks:
            return []
        keys = np.concatenate(key_chunks)
        qids = np.concatenate(qid_chunks)
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        qids = qids[order]
        out = []
        boundaries = np.nonzero(np.diff(keys))[0] + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [keys.size]])
        for a, b in zip(starts, ends):
            out.append((unpack_index(int(keys[a])), qids[a:b]))
        return out

    def search_scan_flat(self, queries, r: float, tier_filter: TierFilter):
        """Radius search of many queries against the admitted tiers.

        The static tier is searched through each block's octree (i.e. the
        downsampled static image); temporary points are scanned exactly.
        Returns (points (F, 3), weights (F,), offsets (Q+1,)) where the
        neighbors of query i occupy rows offsets[i]:offsets[i+1].
        """
        qs = as_points(queries)
        nq = qs.shape[0]
        per_query_pts: list[list[np.ndarray]] = [[] for _ in range(nq)]
        per_query_w: list[list[np.ndarray]] = [[] for _ in range(nq)]
        want_temp = tier_filter.temporary is not None
        for index, qrows in self._blocks_overlapping(qs, r):
            blk = self.blocks.get(index)
            if blk is None:
                continue
            if blk.is_prior_block:
                w_tag = (tier_filter.prior, tier_filter.promoted_in_prior)
            else:
                w_tag = (tier_filter.static_outside, tier_filter.static_outside)
            sub = qs[qrows]
            if blk.tree is not None and blk.tree_points.size and w_tag != (None, None):
                wtab = np.array([np.nan if w is None else w for w in w_tag])
                offsets, flat = blk.tree.radius_search_batch_indices(sub, r)
                if flat.size:
                    weights = wtab[blk.tree_tier[flat]]
                    pts = blk.tree_points[flat]
                    keep = ~np.isnan(weights)
                    for j, q in enumerate(qrows):
                        seg = slice(offsets[j], offsets[j + 1])
                        kseg = keep[seg]
                        if kseg.any():
                            per_query_pts[q].append(pts[seg][kseg])
                            per_query_w[q].append(weights[seg][kseg])
            if want_temp and blk.temp_count:
                toff, tidx = radius_search_flat_batch(blk.temp_points(), sub, r)
                if tidx.size:
                    tpts = blk.temp_points()[tidx]
                    for j, q in enumerate(qrows):
                        seg = slice(toff[j], toff[j + 1])
                        if seg.stop > seg.start:
                            per_query_pts[q].append(tpts[seg])
                            per_query_w[q].append(
                                np.full(seg.stop - seg.start, tier_filter.temporary))
        offsets = np.zeros(nq + 1, dtype=np.int64)
        pts_chunks = []
        w_chunks = []
        total = 0
        for i in range(nq):
            for chunk in per_query_pts[i]:
                total += chunk.shape[0]
            offsets[i + 1] = total
            pts_chunks.extend(per_query_pts[i])
            w_chunks.extend(per_query_w[i])
        if pts_chunks:
            flat_pts = np.concatenate(pts_chunks, axis=0)
            flat_w = np.concatenate(w_chunks)
        else:
            flat_pts = np.empty((0, 3))
            flat_w = np.empty(0)
        return flat_pts, flat_w, offsets

    def radius_search_scan(self, queries, r: float, tier_filter: TierFilter) -> list[np.ndarray]:
        """Per-query neighbor lists over the admitted tiers (points only)."""
        flat_pts, _, offsets = self.search_scan_flat(queries, r, tier_filter)
        return [flat_pts[offsets[i]:offsets[i + 1]] for i in range(len(offsets) - 1)]
