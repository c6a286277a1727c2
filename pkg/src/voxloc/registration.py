"""Weighted scan-to-map registration.

Per iteration: transform the scan by the current pose estimate, re-select
the local map, radius-search every point, fit a plane (falling back to a
line) to each neighborhood, and take one damped Gauss-Newton step on SE(3).
Residuals are the weighted point-to-plane scalar and point-to-line cross
product:

    r_p = w * (n . (R p + t) + d)
    r_l = w * (dir x (R p + t - anchor))

and the total cost is sum(r_p^2) + sum(|r_l|^2). A round that fails to
converge triggers one local-map augmentation (cases c/d) and a second
round; the best pose seen is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MAP_FRAME, Pose, Scan, pose_apply, so3_exp
from .map_loading import (
    ConvergenceStatus,
    LoadingConfig,
    select_local_map,
)
from .voxel_map import VoxelMap

DELTA_PER_POINT = "per_point"
DELTA_TOTAL = "total"

_TINY_EIG = 1e-30


class NoCorrespondences(RuntimeError):
    """Every scan point was skipped (too few neighbors / no clean feature)."""


class SolverSingular(RuntimeError):
    """Normal equations are rank-deficient (degenerate geometry)."""


@dataclass(frozen=True)
class RegistrationConfig:
    search_radius: float = 0.5
    min_neighbors: int = 5
    planarity_ratio: float = 0.1
    linearity_ratio: float = 0.25
    max_iterations: int = 10
    delta: float = 5e-3
    # "per_point": converged when cost / n_correspondences < delta;
    # "total": compare the raw residual sum against delta.
    delta_mode: str = DELTA_PER_POINT
    damping_init: float = 1e-4
    damping_min: float = 1e-9
    damping_max: float = 1e6

    def __post_init__(self):
        if self.search_radius <= 0:
            raise ValueError("search_radius must be > 0")
        if self.min_neighbors < 3:
            raise ValueError("min_neighbors must be >= 3")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.delta_mode not in (DELTA_PER_POINT, DELTA_TOTAL):
            raise ValueError(f"unknown delta_mode {self.delta_mode!r}")


@dataclass(frozen=True)
class PlaneFeature:
    normal: np.ndarray
    intercept: float
    weight: float = 1.0


@dataclass(frozen=True)
class LineFeature:
    direction: np.ndarray
    anchor: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True)
class RegistrationResult:
    pose: Pose
    final_residual: float
    iterations: int
    converged: bool
    correspondences_used: int


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its first component above tolerance is positive."""
    v = vectors
    tol = 1e-12
    use0 = np.abs(v[:, 0]) > tol
    use1 = ~use0 & (np.abs(v[:, 1]) > tol)
    pick = np.where(use0, v[:, 0], np.where(use1, v[:, 1], v[:, 2]))
    signs = np.where(pick < 0, -1.0, 1.0)
    return v * signs[:, None]


def _fit_segments(flat_pts, flat_w, offsets, cfg: RegistrationConfig):
    """Fit a plane or line to each neighbor segment.

    Returns (kind, normals, intercepts, directions, anchors, weights) with
    kind 0 = skipped, 1 = plane, 2 = line, all arrays indexed per segment.
    """
    nq = len(offsets) - 1
    counts = np.diff(offsets)
    kind = np.zeros(nq, dtype=np.int8)
    normals = np.zeros((nq, 3))
    intercepts = np.zeros(nq)
    directions = np.zeros((nq, 3))
    anchors = np.zeros((nq, 3))
    weights = np.ones(nq)
    valid = counts >= cfg.min_neighbors
    if not valid.any():
        return kind, normals, intercepts, directions, anchors, weights

    seg = np.repeat(np.arange(nq), counts)
    sums = np.stack(
        [np.bincount(seg, weights=flat_pts[:, k], minlength=nq) for k in range(3)],
        axis=1)
    safe_counts = np.maximum(counts, 1)
    centroids = sums / safe_counts[:, None]
    # second moments: six unique entries of sum(p p^T)
    m = {}
    for a in range(3):
        for b in range(a, 3):
            m[(a, b)] = np.bincount(
                seg, weights=flat_pts[:, a] * flat_pts[:, b], minlength=nq)
    cov = np.empty((nq, 3, 3))
    for a in range(3):
        for b in range(3):
            key = (a, b) if a <= b else (b, a)
            cov[:, a, b] = m[key] / safe_counts - centroids[:, a] * centroids[:, b]
    weights = np.bincount(seg, weights=flat_w, minlength=nq) / safe_counts

    idx = np.nonzero(valid)[0]
    evals, evecs = np.linalg.eigh(cov[idx])  # ascending eigenvalues
    lam0, lam1, lam2 = evals[:, 0], evals[:, 1], evals[:, 2]
    plane_ratio = np.where(lam1 > _TINY_EIG, lam0 / np.maximum(lam1, _TINY_EIG), np.inf)
    line_ratio = np.where(lam2 > _TINY_EIG, lam1 / np.maximum(lam2, _TINY_EIG), np.inf)
    is_plane = plane_ratio <= cfg.planarity_ratio
    is_line = ~is_plane & (line_ratio <= cfg.linearity_ratio)

    n_vec = _canonical_signs(evecs[:, :, 0])
    d_vec = _canonical_signs(evecs[:, :, 2])
    kind[idx[is_plane]] = 1
    kind[idx[is_line]] = 2
    normals[idx] = n_vec
    intercepts[idx] = -np.sum(n_vec * centroids[idx], axis=1)
    directions[idx] = d_vec
    anchors[idx] = centroids[idx]
    return kind, normals, intercepts, directions, anchors, weights


def fit_plane(neighbors, cfg: RegistrationConfig | None = None,
              weight: float = 1.0) -> PlaneFeature | None:
    """Least-squares plane through a neighborhood, or None when rejected."""
    cfg = cfg or RegistrationConfig()
    pts = np.asarray(neighbors, dtype=np.float64).reshape(-1, 3)
    offsets = np.array([0, pts.shape[0]], dtype=np.int64)
    kind, normals, intercepts, _, _, _ = _fit_segments(
        pts, np.ones(pts.shape[0]), offsets, cfg)
    if kind[0] != 1:
        return None
    return PlaneFeature(normals[0], float(intercepts[0]), weight)


def fit_line(neighbors, cfg: RegistrationConfig | None = None,
             weight: float = 1.0) -> LineFeature | None:
    """Principal-direction line through a neighborhood, or None."""
    cfg = cfg or RegistrationConfig()
    pts = np.asarray(neighbors, dtype=np.float64).reshape(-1, 3)
    offsets = np.array([0, pts.shape[0]], dtype=np.int64)
    kind, _, _, directions, anchors, _ = _fit_segments(
        pts, np.ones(pts.shape[0]), offsets, cfg)
    if kind[0] != 2:
        return None
    return LineFeature(directions[0], anchors[0], weight)


def point_residuals(pose: Pose, point, feature):
    """Weighted residual of one point against its fitted feature.

    Plane features give a scalar, line features the 3-vector cross-product
    residual (its squared norm enters the total cost).
    """
    v = pose_apply(pose, np.asarray(point, dtype=np.float64))
    if isinstance(feature, PlaneFeature):
        return feature.weight * (float(feature.normal @ v) + feature.intercept)
    if isinstance(feature, LineFeature):
        return feature.weight * np.cross(feature.direction, v - feature.anchor)
    raise TypeError(f"unknown feature type {type(feature)!r}")


class _Correspondences:
    """Fixed feature set for one iteration, with batched residual math."""

    def __init__(self, scan_body, kind, normals, intercepts, directions,
                 anchors, weights):
        plane = kind == 1
        line = kind == 2
        self.pb_p = scan_body[plane]
        self.n = normals[plane]
        self.d = intercepts[plane]
        self.w_p = weights[plane]
        self.pb_l = scan_body[line]
        self.dir = directions[line]
        self.anchor = anchors[line]
        self.w_l = weights[line]
        self.count = int(plane.sum() + line.sum())

    def residuals(self, pose: Pose) -> np.ndarray:
        """Stacked residual vector: plane scalars then flattened line 3-vectors."""
        parts = []
        if self.pb_p.shape[0]:
            v = self.pb_p @ pose.rotation.T + pose.translation
            parts.append(self.w_p * (np.sum(self.n * v, axis=1) + self.d))
        if self.pb_l.shape[0]:
            v = self.pb_l @ pose.rotation.T + pose.translation
            rl = self.w_l[:, None] * np.cross(self.dir, v - self.anchor)
            parts.append(rl.reshape(-1))
        if not parts:
            return np.empty(0)
        return np.concatenate(parts)

    def cost(self, pose: Pose) -> float:
        r = self.residuals(pose)
        return float(r @ r)

    def jacobian(self, pose: Pose) -> np.ndarray:
        """Stacked Jacobian of the residual vector w.r.t. the increment
        [omega, dt] applied as R <- Exp(omega) R, t <- t + dt."""
        R = pose.rotation
        blocks = []
        if self.pb_p.shape[0]:
            rp_world = self.pb_p @ R.T
            j = np.empty((self.pb_p.shape[0], 6))
            j[:, :3] = -self.w_p[:, None] * np.cross(self.n, rp_world)
            j[:, 3:] = self.w_p[:, None] * self.n
            blocks.append(j)
        if self.pb_l.shape[0]:
            rp_world = self.pb_l @ R.T
            nl = self.pb_l.shape[0]
            dir_hat = _skew_batch(self.dir)
            rp_hat = _skew_batch(rp_world)
            j = np.empty((nl, 3, 6))
            j[:, :, :3] = -self.w_l[:, None, None] * np.einsum(
                "nij,njk->nik", dir_hat, rp_hat)
            j[:, :, 3:] = self.w_l[:, None, None] * dir_hat
            blocks.append(j.reshape(nl * 3, 6))
        if not blocks:
            return np.empty((0, 6))
        return np.concatenate(blocks, axis=0)

    def normal_equations(self, pose: Pose):
        j = self.jacobian(pose)
        r = self.residuals(pose)
        return j.T @ j, j.T @ r


def _skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros((v.shape[0], 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def _apply_increment(pose: Pose, delta: np.ndarray) -> Pose:
    return Pose(so3_exp(delta[:3]) @ pose.rotation, pose.translation + delta[3:])


def _build_correspondences(scan_pts_body, scan_pts_world, vmap, tier_filter,
                           cfg: RegistrationConfig) -> _Correspondences:
    flat_pts, flat_w, offsets = vmap.search_scan_flat(
        scan_pts_world, cfg.search_radius, tier_filter)
    kind, normals, intercepts, directions, anchors, weights = _fit_segments(
        flat_pts, flat_w, offsets, cfg)
    return _Correspondences(scan_pts_body, kind, normals, intercepts,
                            directions, anchors, weights)


def register_scan(scan_body: Scan, predicted: Pose, vmap: VoxelMap,
                  loading_cfg: LoadingConfig, cfg: RegistrationConfig):
    """Iteratively refine the predicted pose against the local map.

    Returns (RegistrationResult, LoadingDecision). Raises
    NoCorrespondences when every scan point is skipped, SolverSingular on
    rank-deficient normal equations; map_loading.EmptyLocalMap propagates.
    """
    if scan_body.points.shape[0] == 0:
        raise NoCorrespondences("empty scan")
    pts_body = scan_body.points
    pose = predicted
    best_pose = pose
    best_residual = np.inf
    decision = None
    feedback = None
    iterations = 0
    converged = False
    corr_used = 0
    for _round in range(2):
        last_norm = np.inf
        for _k in range(cfg.max_iterations):
            iterations += 1
            pts_world = pose_apply(pose, pts_body)
            scan_world = Scan(scan_body.timestamp, pts_world, frame=MAP_FRAME)
            decision, _local = select_local_map(
                scan_world, pose, vmap, loading_cfg, reg_feedback=feedback)
            corr = _build_correspondences(pts_body, pts_world, vmap,
                                          decision.tier_filter, cfg)
            if corr.count == 0:
                if iterations == 1:
                    raise NoCorrespondences("no scan point produced a feature")
                break
            corr_used = corr.count
            cost0 = corr.cost(pose)
            norm0 = cost0 / corr.count if cfg.delta_mode == DELTA_PER_POINT else cost0
            last_norm = norm0
            if norm0 < best_residual:
                best_residual = norm0
                best_pose = pose
            if norm0 < cfg.delta:
                converged = True
                break
            H, g = corr.normal_equations(pose)
            eigs = np.linalg.eigvalsh(H)
            if eigs[-1] <= 0 or eigs[0] < 1e-10 * eigs[-1]:
                raise SolverSingular(
                    f"normal equations rank-deficient (eigs {eigs[0]:.2e}..{eigs[-1]:.2e})")
            lam = cfg.damping_init
            # Marquardt scaling keeps steps invariant to a common weight factor
            damping = np.diag(np.maximum(np.diag(H), 1e-30))
            accepted = False
            while lam <= cfg.damping_max:
                delta = np.linalg.solve(H + lam * damping, -g)
                candidate = _apply_increment(pose, delta)
                # accepted steps never increase the cost on this iteration's
                # correspondence set
                if corr.cost(candidate) <= cost0:
                    pose = candidate
                    accepted = True
                    break
                lam *= 10.0
            if not accepted:
                break
        if converged:
            break
        # Round ended without convergence (budget exhausted or stalled): the
        # convergence evaluation yields AUGMENT. Augmentation only changes
        # anything in cases c/d and fires at most once per scan.
        if feedback is None and decision is not None and decision.case_id in ("c", "d"):
            feedback = ConvergenceStatus.AUGMENT
            pose = best_pose
            continue
        break
    if converged:
        final_pose = pose
        final_residual = last_norm
        if final_residual < best_residual:
            best_residual = final_residual
    else:
        final_pose = best_pose
        final_residual = best_residual
    result = RegistrationResult(
        pose=final_pose,
        final_residual=float(final_residual),
        iterations=iterations,
        converged=converged,
        correspondences_used=corr_used,
    )
    return result, decision
