import numpy as np
import pytest

from voxloc.geometry import NavState, Pose, pose_apply, rotation_angle_between, so3_exp
from voxloc.imu import GRAVITY, ImuConfig, propagate_until
from voxloc.simulator import (
    SCENARIOS,
    SensorSpec,
    TwistSegment,
    TwistTrajectory,
    UnknownScenario,
    WorldSpec,
    box_surface,
    default_sensor,
    make_scenario,
    raycast_scan,
    rect_surface,
    simulate_session,
    synthesize_imu,
)
from voxloc.voxel_map import voxel_index


def single_plane_world(x=5.0):
    return WorldSpec((rect_surface("wall", 0, x, (-10.0, 10.0), (-10.0, 10.0)),)).build()


class TestRaycast:
    def test_single_forward_ray_hits_plane(self):
        world = single_plane_world(5.0)
        sensor = SensorSpec(fov_mode="narrow", theta_l=0.01, horizontal_rays=1,
                            vertical_rays=1, elevation_min=0.0, elevation_max=0.0,
                            d_min=0.1, d_max=20.0, range_noise_sigma=0.0)
        scan = raycast_scan(world, Pose.identity(), sensor)
        assert len(scan) == 1
        np.testing.assert_allclose(scan.points[0], [5.0, 0.0, 0.0], atol=1e-12)

    def test_rotated_pose_misses_plane(self):
        world = single_plane_world(5.0)
        sensor = SensorSpec(fov_mode="narrow", theta_l=0.5, horizontal_rays=5,
                            vertical_rays=1, elevation_min=0.0, elevation_max=0.0,
                            range_noise_sigma=0.0)
        pose = Pose(so3_exp([0, 0, np.pi]), np.zeros(3))  # facing away
        scan = raycast_scan(world, pose, sensor)
        assert len(scan) == 0

    def test_box_room_ranges_bounded(self, rng):
        lo, hi = np.zeros(3), np.array([6.0, 4.0, 3.0])
        world = WorldSpec((box_surface("room", lo, hi),)).build()
        sensor = default_sensor(noise=False)
        pose = Pose(np.eye(3), [3.0, 2.0, 1.5])
        scan = raycast_scan(world, pose, sensor)
        ranges = np.linalg.norm(scan.points, axis=1)
        half_diagonal = np.linalg.norm(hi - lo) / 2
        assert np.all(ranges <= half_diagonal + 1e-9)
        assert np.all(ranges >= sensor.d_min)

    def test_noise_off_points_on_surfaces(self, rng):
        scenario_world = WorldSpec((
            box_surface("room", (0, 0, 0), (6, 4, 3)),
            box_surface("pillar", (2, 2, 0), (2.5, 2.5, 3)),
        )).build()
        pose = Pose(so3_exp([0, 0, 0.7]), [4.0, 1.0, 1.0])
        scan = raycast_scan(scenario_world, pose, default_sensor(noise=False))
        world_pts = pose_apply(pose, scan.points)
        dist = scenario_world.distance_to_surfaces(world_pts)
        assert np.max(dist) <= 1e-12

    def test_deterministic_given_seed(self):
        world = single_plane_world()
        sensor = default_sensor(noise=True)
        pose = Pose(np.eye(3), [0.0, 0.0, 1.0])
        a = raycast_scan(world, pose, sensor, seed=(1, 2))
        b = raycast_scan(world, pose, sensor, seed=(1, 2))
        assert a.points.tobytes() == b.points.tobytes()
        c = raycast_scan(world, pose, sensor, seed=(1, 3))
        assert a.points.tobytes() != c.points.tobytes()

    def test_transient_surface_window(self):
        cart = box_surface("cart", (3, -1, -1), (4, 1, 1), active=(2.0, 4.0))
        world = WorldSpec((rect_surface("wall", 0, 8.0, (-5, 5), (-5, 5)), cart)).build()
        sensor = SensorSpec(fov_mode="narrow", theta_l=0.01, horizontal_rays=1,
                            vertical_rays=1, elevation_min=0.0, elevation_max=0.0,
                            range_noise_sigma=0.0)
        hit_before = raycast_scan(world, Pose.identity(), sensor, timestamp=1.0)
        hit_during = raycast_scan(world, Pose.identity(), sensor, timestamp=3.0)
        np.testing.assert_allclose(hit_before.points[0, 0], 8.0)
        np.testing.assert_allclose(hit_during.points[0, 0], 3.0)


class TestWorldEdits:
    def test_translate_edit(self):
        spec = WorldSpec((rect_surface("w", 0, 5.0, (0, 1), (0, 1)),),
                         edits=(("translate", "w", (1.0, 0.0, 0.0)),))
        world = spec.edited()
        assert world.value[0] == 6.0

    def test_unknown_edit_target_rejected(self):
        with pytest.raises(ValueError):
            WorldSpec((rect_surface("w", 0, 5.0, (0, 1), (0, 1)),),
                      edits=(("remove", "nope"),))


class TestSynthesizeImu:
    def test_stationary_measurements(self):
        traj = TwistTrajectory(Pose.identity(), [TwistSegment(1.0)])
        sensor = default_sensor(noise=False)
        samples = synthesize_imu(traj, sensor, 1.0)
        for s in samples:
            np.testing.assert_allclose(s.accel, -GRAVITY, atol=1e-12)
            np.testing.assert_allclose(s.gyro, np.zeros(3), atol=1e-12)

    def test_circle_round_trip(self):
        # constant-twist circle: propagating the stream reproduces the
        # trajectory within 1e-3 m / 0.01 rad over 10 s (zeroth-order hold
        # on 200 Hz measurements bounds how sharp the twist can be)
        traj = TwistTrajectory(Pose.identity(),
                               [TwistSegment(10.0, (0, 0, 0.1), (0.3, 0, 0))])
        sensor = default_sensor(noise=False)
        samples = synthesize_imu(traj, sensor, 10.0)
        v0 = traj.states([0.0])[0][2]
        state = NavState(Pose.identity(), velocity=v0)
        out = propagate_until(state, samples, 10.0, ImuConfig())
        gt = traj.pose_at([10.0])[0]
        assert np.linalg.norm(out.pose.translation - gt.translation) <= 1e-3
        assert rotation_angle_between(out.pose.rotation, gt.rotation) <= 0.01

    def test_bias_round_trip(self):
        from dataclasses import replace

        bias_a = (0.05, -0.02, 0.03)
        bias_w = (0.002, 0.001, -0.003)
        traj = TwistTrajectory(Pose.identity(),
                               [TwistSegment(5.0, (0, 0, 0.3), (0.8, 0, 0))])
        sensor = replace(default_sensor(noise=False), accel_bias=bias_a,
                         gyro_bias=bias_w)
        samples = synthesize_imu(traj, sensor, 5.0)
        v0 = traj.states([0.0])[0][2]
        gt = traj.pose_at([5.0])[0]
        # propagation with the matching bias reproduces the trajectory
        good = propagate_until(NavState(Pose.identity(), velocity=v0,
                                        accel_bias=bias_a, gyro_bias=bias_w),
                               samples, 5.0, ImuConfig())
        assert np.linalg.norm(good.pose.translation - gt.translation) <= 1e-3
        # with zero bias it drifts
        bad = propagate_until(NavState(Pose.identity(), velocity=v0),
                              samples, 5.0, ImuConfig())
        assert np.linalg.norm(bad.pose.translation - gt.translation) > 0.05

    def test_blended_trajectory_round_trip(self):
        traj = TwistTrajectory(Pose.identity(), [
            TwistSegment(3.0, (0, 0, 0), (1.0, 0, 0)),
            TwistSegment(3.0, (0, 0, 0.5), (1.0, 0, 0)),
            TwistSegment(3.0, (0, 0, 0), (1.0, 0, 0)),
        ])
        sensor = default_sensor(noise=False)
        samples = synthesize_imu(traj, sensor, traj.duration)
        v0 = traj.states([0.0])[0][2]
        state = NavState(Pose.identity(), velocity=v0)
        out = propagate_until(state, samples, traj.duration, ImuConfig())
        gt = traj.pose_at([traj.duration])[0]
        assert np.linalg.norm(out.pose.translation - gt.translation) <= 2e-3


class TestSessions:
    def test_session_structure(self):
        world = single_plane_world()
        traj = TwistTrajectory(Pose(np.eye(3), [0, 0, 1.0]),
                               [TwistSegment(2.0, (0, 0, 0), (0.5, 0, 0))])
        session = simulate_session(world, traj, default_sensor(), "s", seed=3)
        assert len(session.scans) == len(session.gt_poses) == len(session.scan_times)
        imu_times = np.array([s.timestamp for s in session.imu])
        assert np.all(np.diff(imu_times) > 0)
        assert imu_times[-1] >= session.scan_times[-1]

    def test_sessions_deterministic(self):
        world = single_plane_world()
        traj = TwistTrajectory(Pose(np.eye(3), [0, 0, 1.0]),
                               [TwistSegment(2.0, (0, 0, 0), (0.5, 0, 0))])
        a = simulate_session(world, traj, default_sensor(), "s", seed=3)
        b = simulate_session(world, traj, default_sensor(), "s", seed=3)
        for sa, sb in zip(a.scans, b.scans):
            assert sa.points.tobytes() == sb.points.tobytes()
        for ia, ib in zip(a.imu, b.imu):
            assert ia.accel.tobytes() == ib.accel.tobytes()


class TestScenarios:
    def test_unknown_scenario(self):
        with pytest.raises(UnknownScenario):
            make_scenario("warp_drive")

    @pytest.mark.parametrize("name", SCENARIOS)
    def test_scenarios_build(self, name):
        sc = make_scenario(name, seed=1)
        assert len(sc.prior_session.scans) > 10
        assert len(sc.session.scans) > 10
        assert all(len(s) > 100 for s in sc.session.scans)

    def test_changed_wall_differs_between_sessions(self):
        sc = make_scenario("changed_wall", seed=1)
        prior_vals = {s.name: s for s in sc.prior_world.surfaces}
        session_vals = {s.name: s for s in sc.session_world.surfaces}
        assert prior_vals["wall_mid"].rects[0].value == 12.0
        assert session_vals["wall_mid"].rects[0].value == 13.0

    def test_unmapped_loop_heaviside_transitions(self):
        # H flips from 0 to 1 exactly when the robot's block leaves the
        # prior block set derived from the cropped prior cloud
        sc = make_scenario("unmapped_loop", seed=1)
        s = sc.map_resolution
        prior_blocks = set()
        for scan, pose in zip(sc.prior_session.scans, sc.prior_session.gt_poses):
            world_pts = pose_apply(pose, scan.points)
            world_pts = world_pts[world_pts[:, 0] <= sc.prior_crop_x]
            for idx in {voxel_index(p, s) for p in world_pts}:
                prior_blocks.add(idx)
        h_seq = [0 if voxel_index(p.translation, s) in prior_blocks else 1
                 for p in sc.session.gt_poses]
        assert h_seq[0] == 0
        assert 1 in h_seq
        assert h_seq[-1] == 0
