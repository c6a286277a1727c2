"""SO(3)/SE(3) primitives and the shared state/scan containers.

Conventions used throughout the package:
    - Points are float64 numpy arrays, shape (3,) for a single point or
      (N, 3) for a cloud.
    - Rotations are 3x3 orthonormal matrices (quaternions appear only at
      file-format boundaries).
    - Frames: B = sensor body frame, M = map frame. A Pose (R, t) maps
      body coordinates into map coordinates: p_M = R @ p_B + t.

All containers here are immutable value types and safe to share between
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation-vector norm, so3_exp switches to its series expansion
# to avoid 0/0 in the Rodrigues coefficients.
SMALL_ANGLE = 1e-8

BODY_FRAME = "body"
MAP_FRAME = "map"


def _as_vec3(v) -> np.ndarray:
    out = np.asarray(v, dtype=np.float64).reshape(3)
    return out


def as_points(points) -> np.ndarray:
    """Coerce input to a contiguous (N, 3) float64 array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    return np.ascontiguousarray(pts)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ x == cross(v, x)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Exponential map of a rotation vector to a rotation matrix.

    Uses the Rodrigues formula, falling back to the second-order series
    when the angle is below SMALL_ANGLE.
    """
    w = _as_vec3(omega)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    W = skew(w)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (inverse of so3_exp)."""
    R = np.asarray(rotation, dtype=np.float64)
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < SMALL_ANGLE:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if theta > np.pi - 1e-6:
        # Near pi the skew-part extraction degenerates. Recover the axis
        # from the symmetric part: (R + R^T)/2 = cos*I + (1-cos)*a a^T.
        outer = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
        k = int(np.argmax(np.diag(outer)))
        axis = outer[k] / np.sqrt(max(outer[k, k], 1e-18))
        axis = axis / np.linalg.norm(axis)
        s = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if s @ axis < 0:
            axis = -axis
        return theta * axis
    s = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * s


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    """True when R is orthonormal with determinant +1 within tol."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        return False
    if not np.all(np.isfinite(R)):
        return False
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    return ortho <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1.0
        out = u @ vt
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform (R, t): p_out = R @ p_in + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def pose_apply(pose: Pose, points):
    """Apply a pose to one point (3,) or a cloud (N, 3)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        return pose.rotation @ pts + pose.translation
    return pts @ pose.rotation.T + pose.translation


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Composition a∘b: apply b first, then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def pose_inverse(a: Pose) -> Pose:
    rt = a.rotation.T
    return Pose(rt, -(rt @ a.translation))


def rotation_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle (rad) between two rotation matrices."""
    return float(np.linalg.norm(so3_log(a.T @ b)))


@dataclass(frozen=True, eq=False)
class NavState:
    """Full robot state: pose, velocity, IMU biases, timestamp.

    velocity is in the map frame (m/s); accel_bias (m/s^2) and gyro_bias
    (rad/s) are in the body frame.
    """

    pose: Pose
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "velocity", _as_vec3(self.velocity))
        object.__setattr__(self, "accel_bias", _as_vec3(self.accel_bias))
        object.__setattr__(self, "gyro_bias", _as_vec3(self.gyro_bias))
        object.__setattr__(self, "timestamp", float(self.timestamp))


@dataclass(frozen=True, eq=False)
class Scan:
    """Timestamped point cloud tagged with its coordinate frame."""

    timestamp: float
    points: np.ndarray
    frame: str = BODY_FRAME

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        object.__setattr__(self, "points", as_points(pts) if pts.size else pts)
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if self.frame not in (BODY_FRAME, MAP_FRAME):
            raise ValueError(f"unknown frame {self.frame!r}")

    def __len__(self) -> int:
        return self.points.shape[0]
