"""Life-long lidar-inertial localization on an incremental voxel map.

A three-tier voxel map (prior / temporary / static points) indexed by
spatial hashing, with a per-block incremental octree for radius neighbor
search, an adaptive local-map loading strategy, weighted scan-to-map
registration, and a promotion/demotion map-update policy. A synthetic-world
simulator with exact ground truth drives the end-to-end scenarios.
"""

from .geometry import (
    NavState,
    Pose,
    Scan,
    pose_apply,
    pose_compose,
    pose_inverse,
    so3_exp,
    so3_log,
)
from .kernels import BACKEND
from .octree import IOctree, OctreeConfig
from .voxel_map import MapConfig, VoxelBlock, VoxelMap, voxel_hash, voxel_index

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "IOctree",
    "MapConfig",
    "NavState",
    "OctreeConfig",
    "Pose",
    "Scan",
    "VoxelBlock",
    "VoxelMap",
    "pose_apply",
    "pose_compose",
    "pose_inverse",
    "so3_exp",
    "so3_log",
    "voxel_hash",
    "voxel_index",
]
