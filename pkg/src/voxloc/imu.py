"""Forward state propagation from IMU samples.

Discrete propagation with zeroth-order hold on each measurement interval:

    v+ = v + g*dt + R (a_hat - b_a) dt
    p+ = p + v*dt + 1/2 g dt^2 + 1/2 R (a_hat - b_a) dt^2
    R+ = R Exp((w_hat - b_w) dt)

Biases are held constant (no online bias estimation); measurement noise
exists only in the simulator's measurement model, not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import NavState, Pose, is_rotation, orthonormalize, so3_exp

GRAVITY = np.array([0.0, 0.0, -9.81])


class NonPositiveDt(ValueError):
    pass


class GapTooLarge(ValueError):
    """Raised when consecutive IMU samples are further apart than allowed."""


@dataclass(frozen=True, eq=False)
class ImuSample:
    """One IMU measurement: body-frame specific force and angular rate."""

    timestamp: float
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=np.float64).reshape(3))
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class ImuConfig:
    """Gravity and noise parameters (noise documents the simulator model)."""

    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    accel_noise_sigma: float = 0.0
    gyro_noise_sigma: float = 0.0
    max_sample_gap: float = 0.1

    def __post_init__(self):
        g = np.asarray(self.gravity, dtype=np.float64).reshape(3)
        object.__setattr__(self, "gravity", g)
        norm = float(np.linalg.norm(g))
        if not 9.5 <= norm <= 10.1:
            raise ValueError(f"|gravity| = {norm:.3f} outside [9.5, 10.1]")


# Re-orthonormalize the rotation when round-off drift exceeds this.
_ORTHO_DRIFT_TOL = 1e-9


def imu_propagate(state: NavState, sample: ImuSample, dt: float,
                  cfg: ImuConfig) -> NavState:
    """Propagate the state one interval using a single measurement."""
    if dt <= 0:
        raise NonPositiveDt(f"dt = {dt}")
    R = state.pose.rotation
    g = cfg.gravity
    a_body = sample.accel - state.accel_bias
    a_world = R @ a_body
    v = state.velocity
    v_next = v + g * dt + a_world * dt
    p_next = state.pose.translation + v * dt + 0.5 * g * dt * dt + 0.5 * a_world * dt * dt
    R_next = R @ so3_exp((sample.gyro - state.gyro_bias) * dt)
    if not is_rotation(R_next, tol=_ORTHO_DRIFT_TOL):
        R_next = orthonormalize(R_next)
    return NavState(
        pose=Pose(R_next, p_next),
        velocity=v_next,
        accel_bias=state.accel_bias,
        gyro_bias=state.gyro_bias,
        timestamp=state.timestamp + dt,
    )


def propagate_until(state: NavState, samples, t_target: float,
                    cfg: ImuConfig) -> NavState:
    """Fold imu_propagate over a sample window up to t_target.

    Each sample's measurement is held constant over its interval; the final
    partial interval reuses the last sample. Samples at or before the
    state's timestamp only contribute their measurement, not an interval.
    """
    if t_target <= state.timestamp:
        return state
    samples = list(samples)
    times = np.array([s.timestamp for s in samples])
    if times.size == 0:
        raise GapTooLarge("no IMU samples in window")
    if np.any(np.diff(times) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    # segment boundaries: state time, sample times inside the window, target
    inner = [t for t in times if state.timestamp < t < t_target]
    boundaries = [state.timestamp] + inner + [t_target]
    current = state
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        dt = b - a
        if dt <= 0:
            continue
        if dt > cfg.max_sample_gap + 1e-12:
            raise GapTooLarge(f"IMU gap {dt:.4f}s exceeds {cfg.max_sample_gap}s")
        # measurement valid at segment start: latest sample with ts <= a,
        # else the earliest sample (head segment before the first sample)
        k = int(np.searchsorted(times, a, side="right")) - 1
        sample = samples[max(k, 0)]
        current = imu_propagate(current, sample, dt, cfg)
    return current
