import numpy as np
import pytest

from voxloc.geometry import Scan
from voxloc.voxel_map import (
    EmptyCloud,
    HASH_PRIMES,
    MapConfig,
    TierFilter,
    VoxelMap,
    voxel_hash,
    voxel_index,
    voxel_indices,
)

from conftest import as_point_set, brute_radius, grid_dedup


def map_scan(points):
    return Scan(0.0, np.asarray(points, dtype=float), frame="map")


class TestVoxelIndex:
    def test_floor_of_negative(self):
        assert voxel_index((2.5, -0.1, 0.0), 1.0) == (2, -1, 0)

    def test_origin(self):
        assert voxel_index((0, 0, 0), 1.0) == (0, 0, 0)

    def test_resolution_two(self):
        assert voxel_index((10.0, 3.2, -7.9), 2.0) == (5, 1, -4)

    def test_vectorized_matches_scalar(self, rng):
        pts = rng.uniform(-20, 20, (200, 3))
        ix = voxel_indices(pts, 0.7)
        for i in range(200):
            assert tuple(ix[i]) == voxel_index(pts[i], 0.7)


class TestVoxelHash:
    def test_zero_index(self):
        assert voxel_hash((0, 0, 0)) == 0

    def test_unit_x(self):
        assert voxel_hash((1, 0, 0)) == 73856093

    def test_ones_matches_direct_xor(self):
        # independent one-line evaluation of the XOR prime hash
        assert voxel_hash((1, 1, 1)) == 73856093 ^ 19349669 ^ 83492791

    def test_negative_indices_deterministic_and_unsigned(self):
        h = voxel_hash((-3, 7, -11))
        assert h == voxel_hash((-3, 7, -11))
        assert 0 <= h < 2 ** 64

    def test_wrapping_multiply_oracle(self, rng):
        mask = (1 << 64) - 1
        for _ in range(100):
            idx = tuple(int(v) for v in rng.integers(-10**6, 10**6, 3))
            expected = (((idx[0] & mask) * HASH_PRIMES[0]) & mask) \
                ^ (((idx[1] & mask) * HASH_PRIMES[1]) & mask) \
                ^ (((idx[2] & mask) * HASH_PRIMES[2]) & mask)
            assert voxel_hash(idx) == expected


class TestLoadPriorMap:
    def test_single_point(self):
        m = VoxelMap(MapConfig(resolution=1.0))
        created = m.load_prior_map(map_scan([[0.5, 0.5, 0.5]]))
        assert created == 1
        blk = m.block((0, 0, 0))
        assert blk.is_prior_block
        assert blk.prior_count == 1
        assert blk.static_count == 1

    def test_eight_corner_cells(self):
        m = VoxelMap(MapConfig(resolution=1.0))
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                           dtype=float) + 0.5
        assert m.load_prior_map(map_scan(corners)) == 8

    def test_empty_cloud_rejected(self):
        m = VoxelMap()
        with pytest.raises(EmptyCloud):
            m.load_prior_map(Scan(0.0, np.empty((0, 3)), frame="map"))

    def test_wrong_frame_rejected(self):
        m = VoxelMap()
        with pytest.raises(ValueError):
            m.load_prior_map(Scan(0.0, np.ones((1, 3)), frame="body"))

    def test_partition_matches_floor_oracle(self, rng):
        s = 2.5
        m = VoxelMap(MapConfig(resolution=s))
        pts = rng.uniform(-30, 30, (100_000, 3))
        m.load_prior_map(map_scan(pts))
        # brute-force floor partition oracle
        keys, counts = np.unique(np.floor(pts / s).astype(np.int64), axis=0,
                                 return_counts=True)
        assert len(m) == len(keys)
        for key, count in zip(keys, counts):
            blk = m.block(tuple(key))
            assert blk is not None and blk.prior_count == count
        # every stored point's voxel index equals its block index
        for idx, blk in m.blocks.items():
            assert np.all(voxel_indices(blk.static_points(), s) == np.asarray(idx))


class TestInsertTemporary:
    def test_fresh_block(self):
        m = VoxelMap(MapConfig(resolution=1.0))
        m.insert_temporary([[0.2, 0.2, 0.2]])
        blk = m.block((0, 0, 0))
        assert blk.temp_count == 1
        assert blk.static_count == 0
        assert not blk.is_prior_block

    def test_prior_block_untouched_tiers(self):
        m = VoxelMap(MapConfig(resolution=1.0))
        m.load_prior_map(map_scan([[0.5, 0.5, 0.5]]))
        blk = m.block((0, 0, 0))
        m.insert_temporary([[0.4, 0.4, 0.4]])
        assert blk.prior_count == 1
        assert blk.temp_count == 1
        assert blk.static_count == 1  # static tier untouched by buffering

    def test_conservation_across_blocks(self, rng):
        m = VoxelMap(MapConfig(resolution=1.0))
        pts = rng.uniform(-5, 5, (1234, 3))
        m.insert_temporary(pts)
        assert sum(b.temp_count for b in m.blocks.values()) == 1234


class TestRadiusSearchScan:
    def test_empty_region(self):
        m = VoxelMap(MapConfig(resolution=1.0))
        m.load_prior_map(map_scan([[0.5, 0.5, 0.5]]))
        out = m.radius_search_scan(np.array([[50.0, 50.0, 50.0]]), 0.5,
                                   TierFilter.static_all())
        assert out[0].shape == (0, 3)

    def test_cross_block_neighbor_found(self):
        m = VoxelMap(MapConfig(resolution=1.0))
        # neighbor lives in the adjacent block, within r of the query
        m.load_prior_map(map_scan([[1.05, 0.5, 0.5], [0.5, 0.5, 0.5]]))
        out = m.radius_search_scan(np.array([[0.95, 0.5, 0.5]]), 0.2,
                                   TierFilter.static_all())
        assert as_point_set(out[0]) == {(1.05, 0.5, 0.5)}

    def _oracle_points(self, m, tier_filter):
        """All admitted points with their searchable (downsampled) image."""
        chunks = []
        for idx, blk in m.blocks.items():
            if blk.tree_points.size:
                if blk.is_prior_block:
                    wtab = (tier_filter.prior, tier_filter.promoted_in_prior)
                else:
                    wtab = (tier_filter.static_outside, tier_filter.static_outside)
                mask = np.array([wtab[t] is not None for t in blk.tree_tier])
                if mask.any():
                    chunks.append(blk.tree_points[mask])
            if tier_filter.temporary is not None and blk.temp_count:
                chunks.append(blk.temp_points())
        return np.concatenate(chunks) if chunks else np.empty((0, 3))

    @pytest.mark.parametrize("tier_filter", [
        TierFilter(prior=1.0),
        TierFilter.static_all(),
        TierFilter(prior=1.0, promoted_in_prior=1.0, static_outside=1.0, temporary=0.5),
    ], ids=["prior-only", "static-all", "static+temp"])
    def test_oracle_equivalence(self, rng, tier_filter):
        s = 1.5
        m = VoxelMap(MapConfig(resolution=s))
        m.load_prior_map(map_scan(rng.uniform(-4, 4, (4000, 3))))
        m.insert_temporary(rng.uniform(-4, 4, (500, 3)))
        admitted = self._oracle_points(m, tier_filter)
        queries = rng.uniform(-5, 5, (200, 3))
        r = 0.9
        results = m.radius_search_scan(queries, r, tier_filter)
        for q, got in zip(queries, results):
            assert as_point_set(got) == as_point_set(brute_radius(admitted, q, r))

    def test_search_radius_larger_than_block(self, rng):
        # r > s exercises the multi-shell block cover
        s = 0.5
        m = VoxelMap(MapConfig(resolution=s))
        pts = rng.uniform(-2, 2, (2000, 3))
        m.load_prior_map(map_scan(pts))
        admitted = self._oracle_points(m, TierFilter.static_all())
        q = np.array([[0.1, -0.3, 0.2]])
        got = m.radius_search_scan(q, 1.3, TierFilter.static_all())[0]
        assert as_point_set(got) == as_point_set(brute_radius(admitted, q[0], 1.3))

    def test_weights_follow_tier(self, rng):
        m = VoxelMap(MapConfig(resolution=1.0))
        m.load_prior_map(map_scan([[0.5, 0.5, 0.5]]))
        m.insert_temporary([[0.55, 0.5, 0.5]])
        tf = TierFilter(prior=2.0, temporary=0.5)
        pts, w, offsets = m.search_scan_flat(np.array([[0.5, 0.5, 0.5]]), 0.3, tf)
        assert offsets[1] == 2
        by_point = {tuple(p): wi for p, wi in zip(pts, w)}
        assert by_point[(0.5, 0.5, 0.5)] == 2.0
        assert by_point[(0.55, 0.5, 0.5)] == 0.5


class TestTreeConsistency:
    def test_tree_equals_downsampled_static(self, rng):
        cfg = MapConfig(resolution=2.0)
        m = VoxelMap(cfg)
        m.load_prior_map(map_scan(rng.uniform(-4, 4, (5000, 3))))
        for blk in m.blocks.values():
            lo, _ = blk.bounds()
            expected = grid_dedup(blk.static_points(), lo, cfg.octree.min_extent)
            assert as_point_set(blk.tree_points) == as_point_set(expected)
            assert blk.tree.size == len(expected)

    def test_prior_membership_count(self, rng):
        m = VoxelMap(MapConfig(resolution=1.0))
        m.load_prior_map(map_scan(rng.uniform(0, 3, (500, 3))))
        pts = rng.uniform(-1, 4, (1000, 3))
        prior_set = m.prior_block_indices()
        expected = sum(1 for p in pts if voxel_index(p, 1.0) in prior_set)
        assert m.count_in_prior_blocks(pts) == expected
