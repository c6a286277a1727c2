"""Local-map loading strategy.

Selects which map tiers feed scan registration, based on whether the robot
sits in a prior block (H), how much of the scan lands in prior blocks
(kappa vs the adaptive threshold tau), and - after a failed registration
round - a one-shot augmentation:

    case a (H=0, kappa>=tau): prior points only, normal weight.
    case b (H=0, kappa<tau):  prior points (boosted weight) plus static
                              points outside prior blocks.
    case c (H=1, kappa>=tau): prior points; on non-convergence also static
                              points outside prior blocks, prior boosted.
    case d (H=1, kappa<tau):  static points everywhere; on non-convergence
                              also temporary points at reduced weight.

The expected in-prior fraction rho comes from the sensor footprint: a
circular-segment ratio for 360-degree sensors, a triangle/annulus ratio for
narrow fields of view.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Scan
from .voxel_map import TierFilter, VoxelMap, voxel_index

FOV_NARROW = "narrow"
FOV_WIDE = "wide"


class DegenerateFoV(ValueError):
    pass


class OutOfRange(ValueError):
    """Effective distance exceeds the sensor maximum range."""


class EmptyLocalMap(RuntimeError):
    """No admitted map points; caller should fall back to the IMU pose."""


class ConvergenceStatus(enum.IntEnum):
    """Outcome of the registration-convergence evaluation.

    CONTINUE and AUGMENT are the two branches of the paper rule (keep
    iterating vs trigger map augmentation); CONVERGED is the third outcome
    the rule leaves implicit (residual under threshold).
    """

    AUGMENT = 0
    CONTINUE = 1
    CONVERGED = 2


@dataclass(frozen=True)
class LoadingConfig:
    phi1: float = 30.0
    phi2: float = 10.0
    theta_l: float = 2.0 * math.pi
    d_min: float = 0.0
    d_max: float = 50.0
    fov_mode: str = FOV_WIDE
    delta: float = 5e-3
    max_converge_iters: int = 10
    w_n: float = 1.0
    w_g: float = 2.0
    w_l: float = 0.5

    def __post_init__(self):
        if not self.phi1 > self.phi2 > 0:
            raise ValueError("need phi1 > phi2 > 0")
        if not 0 <= self.d_min < self.d_max:
            raise ValueError("need 0 <= d_min < d_max")
        if not 0 < self.theta_l <= 2.0 * math.pi + 1e-12:
            raise ValueError("theta_l must be in (0, 2*pi]")
        if self.fov_mode not in (FOV_NARROW, FOV_WIDE):
            raise ValueError(f"unknown fov_mode {self.fov_mode!r}")
        if not self.w_g >= self.w_n >= self.w_l > 0:
            raise ValueError("need w_g >= w_n >= w_l > 0")


@dataclass(frozen=True)
class LocalMapSource:
    """One admitted point collection with its provenance and weight."""

    block_index: tuple[int, int, int]
    tier: str  # "prior" | "static" | "temporary"
    weight: float
    points: np.ndarray


@dataclass(frozen=True)
class LocalMap:
    sources: tuple[LocalMapSource, ...]

    @property
    def total_points(self) -> int:
        return sum(s.points.shape[0] for s in self.sources)


@dataclass(frozen=True)
class LoadingDecision:
    case_id: str
    heaviside: int
    phi_star: float
    rho: float
    tau: int
    kappa: int
    tier_filter: TierFilter
    weights: dict
    augmented: bool


def heaviside(robot_block, prior_blocks) -> int:
    """0 if the robot's block is a prior block, else 1.

    ``prior_blocks`` is any container supporting ``in`` (e.g. the set from
    VoxelMap.prior_block_indices()).
    """
    return 0 if tuple(robot_block) in prior_blocks else 1


def effective_distance(h: int, cfg: LoadingConfig) -> float:
    return cfg.phi2 + (cfg.phi1 - cfg.phi2) * h


def ratio_narrow(phi_star: float, h: int, cfg: LoadingConfig) -> float:
    """Expected in-prior fraction for a narrow horizontal field of view.

    Evaluates the triangle-over-annulus ratio with its H-dependent flip,
    clamped to [0, 1].
    """
    phi_e = cfg.d_max ** 2 - cfg.d_min ** 2
    if cfg.theta_l <= 0 or phi_e <= 0:
        raise DegenerateFoV(f"theta_l={cfg.theta_l}, effective range={phi_e}")
    base = (phi_star ** 2) * math.tan(cfg.theta_l / 2.0) / (0.5 * phi_e * cfg.theta_l)
    rho = base * (1.0 - 2.0 * h) + h
    return min(max(rho, 0.0), 1.0)


def ratio_wide(phi_star: float, cfg: LoadingConfig) -> float:
    """Expected in-prior fraction for a 360-degree sensor.

    Closed form of the circular-segment integral: the area of the disk of
    radius d_max above the chord at height phi_star, over the disk area.
    """
    d = cfg.d_max
    if phi_star > d:
        raise OutOfRange(f"phi* = {phi_star} exceeds d_max = {d}")
    phi = max(phi_star, 0.0)
    segment = d * d * math.acos(phi / d) - phi * math.sqrt(max(d * d - phi * phi, 0.0))
    return segment / (math.pi * d * d)


def threshold_tau(n: int, rho: float, s: float) -> int:
    return int(math.floor(n * rho * s))


def convergence_flag(r_k: float, k: int, cfg: LoadingConfig) -> ConvergenceStatus:
    """Registration-convergence evaluation on the residual at iteration k."""
    if r_k <= cfg.delta:
        return ConvergenceStatus.CONVERGED
    if k <= cfg.max_converge_iters:
        return ConvergenceStatus.CONTINUE
    return ConvergenceStatus.AUGMENT


def _case_filter(case_id: str, augmented: bool, cfg: LoadingConfig):
    w_n, w_g, w_l = cfg.w_n, cfg.w_g, cfg.w_l
    if case_id == "a":
        return TierFilter(prior=w_n), {"prior": w_n}
    if case_id == "b":
        return TierFilter(prior=w_g, static_outside=w_n), {"prior": w_g, "static": w_n}
    if case_id == "c":
        if augmented:
            return (TierFilter(prior=w_g, static_outside=w_n),
                    {"prior": w_g, "static": w_n})
        return TierFilter(prior=w_n), {"prior": w_n}
    if case_id == "d":
        base = TierFilter(prior=w_n, promoted_in_prior=w_n, static_outside=w_n)
        if augmented:
            return (TierFilter(prior=w_n, promoted_in_prior=w_n,
                               static_outside=w_n, temporary=w_l),
                    {"static": w_n, "temporary": w_l})
        return base, {"static": w_n}
    raise ValueError(case_id)


def _materialize(vmap: VoxelMap, tier_filter: TierFilter) -> LocalMap:
    sources = []
    for idx, blk in vmap.blocks.items():
        if blk.tree_points.size:
            if blk.is_prior_block:
                if tier_filter.prior is not None:
                    mask = blk.tree_tier == 0
                    if mask.any():
                        sources.append(LocalMapSource(idx, "prior", tier_filter.prior,
                                                      blk.tree_points[mask]))
                if tier_filter.promoted_in_prior is not None:
                    mask = blk.tree_tier == 1
                    if mask.any():
                        sources.append(LocalMapSource(
                            idx, "static", tier_filter.promoted_in_prior,
                            blk.tree_points[mask]))
            elif tier_filter.static_outside is not None:
                sources.append(LocalMapSource(idx, "static", tier_filter.static_outside,
                                              blk.tree_points))
        if tier_filter.temporary is not None and blk.temp_count:
            sources.append(LocalMapSource(idx, "temporary", tier_filter.temporary,
                                          blk.temp_points()))
    return LocalMap(tuple(sources))


def select_local_map(scan_world: Scan, robot_pose: Pose, vmap: VoxelMap,
                     cfg: LoadingConfig, reg_feedback=None):
    """Pick the local map tiers and weights for one registration round.

    ``scan_world`` must already be transformed by the predicted (or
    current) pose. ``reg_feedback`` is the previous round's convergence
    outcome; AUGMENT (0) triggers the one-shot augmentation in cases c/d.

    Returns (LoadingDecision, LocalMap); raises EmptyLocalMap when the
    admitted set is empty.
    """
    s = vmap.config.resolution
    robot_block = voxel_index(robot_pose.translation, s)
    h = heaviside(robot_block, vmap.prior_block_indices())
    phi_star = effective_distance(h, cfg)
    if cfg.fov_mode == FOV_NARROW:
        rho = ratio_narrow(phi_star, h, cfg)
    else:
        rho = ratio_wide(phi_star, cfg)
    n = scan_world.points.shape[0]
    tau = threshold_tau(n, rho, s)
    kappa = vmap.count_in_prior_blocks(scan_world.points)
    if h == 0:
        case_id = "a" if kappa >= tau else "b"
    else:
        case_id = "c" if kappa >= tau else "d"
    wants_augment = reg_feedback is not None and int(reg_feedback) == int(ConvergenceStatus.AUGMENT)
    augmented = wants_augment and case_id in ("c", "d")
    tier_filter, weights = _case_filter(case_id, augmented, cfg)
    local_map = _materialize(vmap, tier_filter)
    decision = LoadingDecision(
        case_id=case_id,
        heaviside=h,
        phi_star=phi_star,
        rho=rho,
        tau=tau,
        kappa=kappa,
        tier_filter=tier_filter,
        weights=weights,
        augmented=augmented,
    )
    if local_map.total_points == 0:
        raise EmptyLocalMap(f"case {case_id}: no admitted map points")
    return decision, local_map
