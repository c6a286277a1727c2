import numpy as np
import pytest

from voxloc.geometry import NavState, Pose, is_rotation, rotation_angle_between, so3_exp
from voxloc.imu import (
    GRAVITY,
    GapTooLarge,
    ImuConfig,
    ImuSample,
    NonPositiveDt,
    imu_propagate,
    propagate_until,
)
from voxloc.simulator import TwistTrajectory, TwistSegment, default_sensor, synthesize_imu


def stationary_sample(t=0.0):
    return ImuSample(t, -GRAVITY, np.zeros(3))


class TestImuPropagate:
    def test_stationary_state_unchanged(self):
        state = NavState(Pose.identity(), timestamp=0.0)
        cfg = ImuConfig()
        out = imu_propagate(state, stationary_sample(), 0.01, cfg)
        np.testing.assert_allclose(out.pose.translation, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(out.pose.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(out.velocity, np.zeros(3), atol=1e-15)
        assert out.timestamp == pytest.approx(0.01)

    def test_free_fall_with_spin(self):
        state = NavState(Pose.identity(), timestamp=0.0)
        cfg = ImuConfig()
        w = 0.7
        dt = 0.05
        out = imu_propagate(state, ImuSample(0.0, np.zeros(3), [0, 0, w]), dt, cfg)
        np.testing.assert_allclose(out.pose.rotation, so3_exp([0, 0, w * dt]), atol=1e-12)
        np.testing.assert_allclose(out.velocity, GRAVITY * dt, atol=1e-12)

    def test_rejects_non_positive_dt(self):
        state = NavState(Pose.identity())
        with pytest.raises(NonPositiveDt):
            imu_propagate(state, stationary_sample(), 0.0, ImuConfig())

    def test_biases_constant_and_compensated(self):
        b_a = np.array([0.1, -0.2, 0.05])
        b_w = np.array([0.01, 0.0, -0.02])
        state = NavState(Pose.identity(), accel_bias=b_a, gyro_bias=b_w)
        sample = ImuSample(0.0, -GRAVITY + b_a, b_w)
        out = imu_propagate(state, sample, 0.01, ImuConfig())
        np.testing.assert_allclose(out.velocity, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(out.accel_bias, b_a)
        np.testing.assert_allclose(out.gyro_bias, b_w)

    def test_deterministic(self):
        state = NavState(Pose.identity())
        sample = ImuSample(0.0, [0.1, 0.2, 9.9], [0.01, 0.02, 0.03])
        a = imu_propagate(state, sample, 0.005, ImuConfig())
        b = imu_propagate(state, sample, 0.005, ImuConfig())
        assert a.pose.rotation.tobytes() == b.pose.rotation.tobytes()
        assert a.pose.translation.tobytes() == b.pose.translation.tobytes()

    def test_rotation_stays_orthonormal_many_steps(self):
        state = NavState(Pose.identity())
        cfg = ImuConfig()
        sample = ImuSample(0.0, -GRAVITY, [0.3, -0.2, 0.5])
        for _ in range(100_000):
            state = imu_propagate(state, sample, 0.005, cfg)
        assert is_rotation(state.pose.rotation, tol=1e-8)


def constant_twist_oracle(start: Pose, omega, vel, t):
    """Closed-form constant-twist pose (independent of the integrator)."""
    from scipy.linalg import expm

    omega = np.asarray(omega, dtype=float)
    vel = np.asarray(vel, dtype=float)
    W = np.array([[0, -omega[2], omega[1]],
                  [omega[2], 0, -omega[0]],
                  [-omega[1], omega[0], 0]])
    R = start.rotation @ expm(W * t)
    # integral of R(s) v ds via fine quadrature (independent of the code path)
    ts = np.linspace(0, t, 20001)
    vs = np.stack([start.rotation @ expm(W * s) @ vel for s in ts])
    p = start.translation + np.trapezoid(vs, ts, axis=0)
    return Pose(R, p)


class TestConstantTwist:
    def test_propagation_matches_closed_form(self):
        omega = np.array([0.0, 0.0, 0.5])
        vel = np.array([1.0, 0.0, 0.0])
        traj = TwistTrajectory(Pose.identity(), [TwistSegment(1.0, tuple(omega), tuple(vel))])
        sensor = default_sensor(noise=False)
        samples = synthesize_imu(traj, sensor, 1.0)
        v0 = traj.states([0.0])[0][2]
        state = NavState(Pose.identity(), velocity=v0, timestamp=0.0)
        out = propagate_until(state, samples, 1.0, ImuConfig())
        oracle = constant_twist_oracle(Pose.identity(), omega, vel, 1.0)
        assert np.linalg.norm(out.pose.translation - oracle.translation) <= 1e-3
        assert rotation_angle_between(out.pose.rotation, oracle.rotation) <= 0.01


class TestPropagateUntil:
    def test_zero_length_window(self):
        state = NavState(Pose.identity(), timestamp=1.0)
        out = propagate_until(state, [stationary_sample(1.0)], 1.0, ImuConfig())
        assert out is state

    def test_stationary_stream(self):
        state = NavState(Pose.identity(), timestamp=0.0)
        samples = [stationary_sample(t) for t in np.arange(0, 1.01, 0.01)]
        out = propagate_until(state, samples, 1.0, ImuConfig())
        np.testing.assert_allclose(out.pose.translation, np.zeros(3), atol=1e-12)
        assert out.timestamp == pytest.approx(1.0)

    def test_gap_detection(self):
        state = NavState(Pose.identity(), timestamp=0.0)
        samples = [stationary_sample(0.0), stationary_sample(0.5)]
        with pytest.raises(GapTooLarge):
            propagate_until(state, samples, 0.5, ImuConfig(max_sample_gap=0.1))

    def test_convergence_order_in_dt(self):
        # halving the sample interval shrinks the error roughly linearly
        omega = (0.0, 0.6, 0.4)
        vel = (1.0, 0.2, 0.0)
        traj = TwistTrajectory(Pose.identity(), [TwistSegment(1.0, omega, vel)])
        from dataclasses import replace

        errors = []
        for rate in (100.0, 200.0, 400.0):
            sensor = replace(default_sensor(noise=False), imu_rate=rate)
            samples = synthesize_imu(traj, sensor, 1.0)
            v0 = traj.states([0.0])[0][2]
            state = NavState(Pose.identity(), velocity=v0)
            out = propagate_until(state, samples, 1.0, ImuConfig())
            gt = traj.pose_at([1.0])[0]
            errors.append(np.linalg.norm(out.pose.translation - gt.translation))
        assert errors[2] < errors[1] < errors[0]
        assert errors[0] / errors[2] > 2.0  # at least ~first order


class TestImuConfig:
    def test_gravity_magnitude_guard(self):
        with pytest.raises(ValueError):
            ImuConfig(gravity=(0, 0, -1.6))  # lunar gravity needs an override
