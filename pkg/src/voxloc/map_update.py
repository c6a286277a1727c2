"""Map update policy: match classification, buffering, promotion, demotion.

Unmatched scan points are buffered in the temporary tier rather than added
to the map directly. Once a block's temporary tier reaches the promotion
threshold the points move to the static tier; if that promotion leaves a
prior block with a static tier more than twice its prior tier, the block's
prior content is deemed unreliable: the prior tier is discarded, the static
tier is rebuilt from the just-promoted points alone, and the block loses
its prior status for good.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import MAP_FRAME, Scan
from .registration import RegistrationConfig, _fit_segments
from .voxel_map import MapConfig, TierFilter, VoxelMap


@dataclass
class UpdateReport:
    points_buffered: int = 0
    blocks_promoted: list = field(default_factory=list)
    blocks_demoted: list = field(default_factory=list)
    trees_rebuilt: int = 0


def classify_matches(scan_world: Scan, vmap: VoxelMap, cfg: MapConfig):
    """Partition a registered scan into (matched, unmatched) points.

    A point matches the static tier when its radius search returns at
    least ``match_min_neighbors`` neighbors and its distance to the
    locally fitted plane or line is at most ``match_max_distance``. When
    the neighborhood fits neither feature cleanly, the nearest-neighbor
    distance is used instead.
    """
    if scan_world.frame != MAP_FRAME:
        raise ValueError("classification runs on the map-frame scan")
    pts = scan_world.points
    n = pts.shape[0]
    if n == 0:
        return pts.reshape(0, 3), pts.reshape(0, 3)
    flat_pts, flat_w, offsets = vmap.search_scan_flat(
        pts, cfg.match_radius, TierFilter.static_all())
    counts = np.diff(offsets)
    matched = np.zeros(n, dtype=bool)
    enough = counts >= cfg.match_min_neighbors
    if enough.any():
        fit_cfg = RegistrationConfig(
            search_radius=cfg.match_radius,
            min_neighbors=cfg.match_min_neighbors,
        )
        kind, normals, intercepts, directions, anchors, _ = _fit_segments(
            flat_pts, flat_w, offsets, fit_cfg)
        dist = np.full(n, np.inf)
        plane = kind == 1
        if plane.any():
            dist[plane] = np.abs(
                np.sum(normals[plane] * pts[plane], axis=1) + intercepts[plane])
        line = kind == 2
        if line.any():
            cross = np.cross(directions[line], pts[line] - anchors[line])
            dist[line] = np.linalg.norm(cross, axis=1)
        ragged = kind == 0
        if np.any(ragged & enough):
            # no clean feature: fall back to the nearest neighbor distance
            for i in np.nonzero(ragged & enough)[0]:
                seg = flat_pts[offsets[i]:offsets[i + 1]]
                dist[i] = float(np.min(np.linalg.norm(seg - pts[i], axis=1)))
        matched = enough & (dist <= cfg.match_max_distance)
    return pts[matched], pts[~matched]


def accumulate_and_promote(vmap: VoxelMap, unmatched, cfg: MapConfig | None = None) -> UpdateReport:
    """Buffer unmatched points, then promote ripe blocks and demote where
    the promotion reveals a drastic change.

    Steps per the update policy: (1) append the points to their blocks'
    temporary tiers; (2) every block whose temporary tier reached the
    promotion threshold moves it into the static tier; (3) a prior block
    whose static tier then exceeds twice its prior tier is demoted: prior
    cleared, static rebuilt from the just-promoted points only; (4) the
    octree of every touched block is refreshed.
    """
    cfg = cfg or vmap.config
    report = UpdateReport()
    unmatched = np.asarray(unmatched, dtype=np.float64).reshape(-1, 3)
    if unmatched.shape[0]:
        vmap.insert_temporary(unmatched)
        report.points_buffered = unmatched.shape[0]
    demoted_any = False
    for index, blk in vmap.blocks.items():
        if blk.temp_count < cfg.promote_threshold:
            continue
        promoted = blk.take_temp()
        blk.promote(promoted)
        report.blocks_promoted.append(index)
        report.trees_rebuilt += 1
        if blk.is_prior_block and blk.static_count > 2 * blk.prior_count:
            blk.demote(promoted)
            report.blocks_demoted.append(index)
            demoted_any = True
    if demoted_any:
        vmap.refresh_prior_membership()
    return report


def export_static_map(vmap: VoxelMap) -> Scan:
    """Concatenated static tier of all blocks, in block-index order."""
    chunks = []
    for index in sorted(vmap.blocks):
        pts = vmap.blocks[index].static_points()
        if pts.shape[0]:
            chunks.append(pts)
    points = np.concatenate(chunks, axis=0) if chunks else np.empty((0, 3))
    return Scan(0.0, points, frame=MAP_FRAME)
