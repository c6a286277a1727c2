"""Synthetic world and sensor rig with exact ground truth.

Worlds are built from axis-aligned rectangles and boxes, which keeps
raycasting exact (points lie on the surfaces to machine precision) and
makes plane/line features well-posed for registration. Trajectories are
piecewise constant-twist with quintic blends, so body rates and world
accelerations are analytic and the IMU measurement model can be inverted
exactly:

    a_hat = R^T (a_world - g) + b_a + n_a
    w_hat = w_body + b_w + n_w

Everything is deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import BODY_FRAME, Pose, Scan, so3_exp
from .imu import GRAVITY, ImuSample

_AXES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


class UnknownScenario(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    """Finite axis-aligned rectangle: plane {x[axis] = value} clipped to
    [u_lo, u_hi] x [v_lo, v_hi] on the other two axes."""

    axis: int
    value: float
    u_lo: float
    u_hi: float
    v_lo: float
    v_hi: float
    active_from: float = -np.inf
    active_until: float = np.inf


@dataclass(frozen=True)
class Surface:
    name: str
    rects: tuple[Rect, ...]

    def translated(self, offset) -> "Surface":
        dx, dy, dz = offset
        moved = []
        for r in self.rects:
            d = (dx, dy, dz)
            ua, va = _AXES[r.axis]
            moved.append(Rect(r.axis, r.value + d[r.axis],
                              r.u_lo + d[ua], r.u_hi + d[ua],
                              r.v_lo + d[va], r.v_hi + d[va],
                              r.active_from, r.active_until))
        return Surface(self.name, tuple(moved))


def rect_surface(name, axis, value, u_range, v_range, active=None) -> Surface:
    window = active or (-np.inf, np.inf)
    return Surface(name, (Rect(axis, value, u_range[0], u_range[1],
                               v_range[0], v_range[1], window[0], window[1]),))


def box_surface(name, lo, hi, active=None) -> Surface:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    window = active or (-np.inf, np.inf)
    rects = []
    for axis in range(3):
        ua, va = _AXES[axis]
        for value in (lo[axis], hi[axis]):
            rects.append(Rect(axis, value, lo[ua], hi[ua], lo[va], hi[va],
                              window[0], window[1]))
    return Surface(name, tuple(rects))


@dataclass(frozen=True)
class WorldSpec:
    """Named surfaces plus per-session edits (add/remove/translate)."""

    surfaces: tuple[Surface, ...]
    edits: tuple = ()  # ("remove", name) | ("translate", name, offset) | ("add", Surface)

    def __post_init__(self):
        if not self.surfaces:
            raise ValueError("world needs at least one surface")
        names = {s.name for s in self.surfaces}
        for edit in self.edits:
            if edit[0] in ("remove", "translate") and edit[1] not in names:
                raise ValueError(f"edit references unknown surface {edit[1]!r}")

    def build(self) -> "World":
        return World(self.apply_edits(()))

    def apply_edits(self, edits=None) -> tuple[Surface, ...]:
        surfaces = {s.name: s for s in self.surfaces}
        for edit in (self.edits if edits is None else edits):
            op = edit[0]
            if op == "remove":
                surfaces.pop(edit[1])
            elif op == "translate":
                surfaces[edit[1]] = surfaces[edit[1]].translated(edit[2])
            elif op == "add":
                surfaces[edit[1].name] = edit[1]
            else:
                raise ValueError(f"unknown edit {op!r}")
        return tuple(surfaces.values())

    def edited(self) -> "World":
        return World(self.apply_edits(None))


class World:
    """Flattened rectangle arrays for vectorized raycasting."""

    def __init__(self, surfaces: tuple[Surface, ...]):
        self.surfaces = surfaces
        rects = [r for s in surfaces for r in s.rects]
        self.axis = np.array([r.axis for r in rects], dtype=np.int64)
        self.value = np.array([r.value for r in rects])
        self.u_lo = np.array([r.u_lo for r in rects])
        self.u_hi = np.array([r.u_hi for r in rects])
        self.v_lo = np.array([r.v_lo for r in rects])
        self.v_hi = np.array([r.v_hi for r in rects])
        self.t_from = np.array([r.active_from for r in rects])
        self.t_until = np.array([r.active_until for r in rects])
        self.u_axis = np.array([_AXES[r.axis][0] for r in rects], dtype=np.int64)
        self.v_axis = np.array([_AXES[r.axis][1] for r in rects], dtype=np.int64)

    def raycast(self, origin, dirs, d_min, d_max, time=0.0):
        """Smallest hit range per ray in [d_min, d_max], or inf."""
        o = np.asarray(origin, dtype=float)
        d = np.asarray(dirs, dtype=float)
        active = (self.t_from <= time) & (time <= self.t_until)
        n_rays = d.shape[0]
        best = np.full(n_rays, np.inf)
        for si in np.nonzero(active)[0]:
            a = self.axis[si]
            da = d[:, a]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (self.value[si] - o[a]) / da
                u = o[self.u_axis[si]] + t * d[:, self.u_axis[si]]
                v = o[self.v_axis[si]] + t * d[:, self.v_axis[si]]
            ok = (
                np.isfinite(t)
                & (t >= d_min)
                & (t <= d_max)
                & (u >= self.u_lo[si]) & (u <= self.u_hi[si])
                & (v >= self.v_lo[si]) & (v <= self.v_hi[si])
            )
            best = np.where(ok & (t < best), t, best)
        return best

    def distance_to_surfaces(self, points, time=0.0) -> np.ndarray:
        """Distance of each point to the nearest active rectangle (tests)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        active = (self.t_from <= time) & (time <= self.t_until)
        best = np.full(pts.shape[0], np.inf)
        for si in np.nonzero(active)[0]:
            a = self.axis[si]
            du = np.clip(
                np.maximum(self.u_lo[si] - pts[:, self.u_axis[si]],
                           pts[:, self.u_axis[si]] - self.u_hi[si]), 0, None)
            dv = np.clip(
                np.maximum(self.v_lo[si] - pts[:, self.v_axis[si]],
                           pts[:, self.v_axis[si]] - self.v_hi[si]), 0, None)
            dn = pts[:, a] - self.value[si]
            best = np.minimum(best, np.sqrt(dn * dn + du * du + dv * dv))
        return best


@dataclass(frozen=True)
class SensorSpec:
    """Lidar scan pattern, ranging limits, and IMU rates/noise."""

    fov_mode: str = "wide"
    theta_l: float = 2.0 * math.pi
    horizontal_rays: int = 120
    vertical_rays: int = 6
    elevation_min: float = -0.45
    elevation_max: float = 0.35
    d_min: float = 0.3
    d_max: float = 12.0
    scan_rate: float = 2.0
    range_noise_sigma: float = 0.0
    imu_rate: float = 200.0
    accel_noise_sigma: float = 0.0
    gyro_noise_sigma: float = 0.0
    accel_bias: tuple = (0.0, 0.0, 0.0)
    gyro_bias: tuple = (0.0, 0.0, 0.0)


def ray_directions(sensor: SensorSpec) -> np.ndarray:
    """Body-frame unit ray directions (x forward, z up)."""
    half = sensor.theta_l / 2.0
    if sensor.fov_mode == "wide":
        yaw = np.linspace(-math.pi, math.pi, sensor.horizontal_rays, endpoint=False)
    elif sensor.horizontal_rays == 1:
        yaw = np.zeros(1)
    else:
        yaw = np.linspace(-half, half, sensor.horizontal_rays)
    if sensor.vertical_rays == 1:
        pitch = np.array([0.5 * (sensor.elevation_min + sensor.elevation_max)])
    else:
        pitch = np.linspace(sensor.elevation_min, sensor.elevation_max,
                            sensor.vertical_rays)
    yy, pp = np.meshgrid(yaw, pitch)
    yy = yy.ravel()
    pp = pp.ravel()
    return np.stack([np.cos(pp) * np.cos(yy), np.cos(pp) * np.sin(yy),
                     np.sin(pp)], axis=1)


def raycast_scan(world: World, pose: Pose, sensor: SensorSpec, seed=0,
                 timestamp: float = 0.0) -> Scan:
    """One lidar scan from a pose; body-frame points, misses dropped."""
    dirs_body = ray_directions(sensor)
    dirs_world = dirs_body @ pose.rotation.T
    ranges = world.raycast(pose.translation, dirs_world, sensor.d_min,
                           sensor.d_max, time=timestamp)
    hit = np.isfinite(ranges)
    ranges = ranges[hit]
    dirs_hit = dirs_body[hit]
    if sensor.range_noise_sigma > 0:
        rng = np.random.default_rng(seed)
        ranges = ranges + rng.normal(0.0, sensor.range_noise_sigma, ranges.shape)
    return Scan(timestamp, dirs_hit * ranges[:, None], frame=BODY_FRAME)


def _smoothstep(u: float) -> tuple[float, float]:
    """C^2 quintic smoothstep and its derivative on [0, 1]."""
    s = 6 * u**5 - 15 * u**4 + 10 * u**3
    ds = 30 * u**4 - 60 * u**3 + 30 * u**2
    return s, ds


def _twist_integral(omega: np.ndarray, h: float) -> np.ndarray:
    """Closed form of the rotation-averaged displacement map:
    integral_0^h Exp(s*omega^) ds."""
    theta = float(np.linalg.norm(omega)) * h
    W = np.array([
        [0.0, -omega[2], omega[1]],
        [omega[2], 0.0, -omega[0]],
        [-omega[1], omega[0], 0.0],
    ])
    if theta < 1e-8:
        return h * np.eye(3) + 0.5 * h * h * W
    n2 = float(omega @ omega)
    n3 = n2 * float(np.linalg.norm(omega))
    return (h * np.eye(3)
            + ((1.0 - math.cos(theta)) / n2) * W
            + ((theta - math.sin(theta)) / n3) * (W @ W))


@dataclass(frozen=True)
class TwistSegment:
    duration: float
    omega: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)


class TwistTrajectory:
    """Piecewise constant body twist with quintic blends at the joints.

    Constant stretches advance with the exact constant-twist closed form;
    blend windows are integrated with fine midpoint/Simpson substeps.
    """

    def __init__(self, start: Pose, segments, blend: float = 0.4):
        self.start = start
        self.segments = [TwistSegment(*s) if not isinstance(s, TwistSegment) else s
                         for s in segments]
        self.blend = float(blend)
        ends = np.cumsum([s.duration for s in self.segments])
        self._ends = ends
        self.duration = float(ends[-1]) if len(ends) else 0.0

    def twist(self, t: float):
        """(omega_body, v_body, dv_body/dt) at time t."""
        t = min(max(t, 0.0), self.duration)
        k = int(np.searchsorted(self._ends, t, side="right"))
        k = min(k, len(self.segments) - 1)
        seg = self.segments[k]
        omega = np.asarray(seg.omega, dtype=float)
        vel = np.asarray(seg.velocity, dtype=float)
        b = self.blend
        if b <= 0:
            return omega, vel, np.zeros(3)
        # blend with the previous/next segment around the joint
        t_start = self._ends[k] - seg.duration
        if k > 0 and t < t_start + b / 2:
            prev = self.segments[k - 1]
            u = (t - (t_start - b / 2)) / b
            s, ds = _smoothstep(u)
            w0 = np.asarray(prev.omega, dtype=float)
            v0 = np.asarray(prev.velocity, dtype=float)
            return (w0 + (omega - w0) * s, v0 + (vel - v0) * s,
                    (vel - v0) * (ds / b))
        if k + 1 < len(self.segments) and t > self._ends[k] - b / 2:
            nxt = self.segments[k + 1]
            u = (t - (self._ends[k] - b / 2)) / b
            s, ds = _smoothstep(u)
            w1 = np.asarray(nxt.omega, dtype=float)
            v1 = np.asarray(nxt.velocity, dtype=float)
            return (omega + (w1 - omega) * s, vel + (v1 - vel) * s,
                    (v1 - vel) * (ds / b))
        return omega, vel, np.zeros(3)

    def _blend_windows(self):
        out = []
        b = self.blend
        if b <= 0:
            return out
        for k in range(len(self.segments) - 1):
            out.append((self._ends[k] - b / 2, self._ends[k] + b / 2))
        return out

    def states(self, times):
        """Ground-truth (R, p, v_world, a_world, omega_body) at given times.

        ``times`` must be sorted and within [0, duration].
        """
        times = np.asarray(times, dtype=float)
        breakpoints = set(np.round(times, 12).tolist())
        for a, b in self._blend_windows():
            breakpoints.add(round(a, 12))
            breakpoints.add(round(b, 12))
        breakpoints.add(0.0)
        breakpoints.add(round(self.duration, 12))
        grid = sorted(t for t in breakpoints if 0.0 <= t <= self.duration + 1e-12)
        windows = self._blend_windows()

        def in_blend(a, b):
            mid = 0.5 * (a + b)
            return any(lo - 1e-12 < mid < hi + 1e-12 for lo, hi in windows)

        R = self.start.rotation.copy()
        p = self.start.translation.copy()
        states_at = {}

        def record(t):
            omega, vel, dvel = self.twist(t)
            v_world = R @ vel
            a_world = R @ (np.cross(omega, vel) + dvel)
            states_at[round(t, 12)] = (R.copy(), p.copy(), v_world, a_world, omega.copy())

        record(grid[0])
        for a, b in zip(grid[:-1], grid[1:]):
            span = b - a
            if span <= 0:
                continue
            if in_blend(a, b):
                n_sub = max(int(math.ceil(span / 1e-3)), 1)
                h = span / n_sub
                for i in range(n_sub):
                    t0 = a + i * h
                    w_mid, v_mid, _ = self.twist(t0 + h / 2)
                    w0, v0, _ = self.twist(t0)
                    w1, v1, _ = self.twist(t0 + h)
                    R_mid = R @ so3_exp(w_mid * (h / 2))
                    R_end = R @ so3_exp(w_mid * h)
                    p = p + (h / 6.0) * (R @ v0 + 4.0 * (R_mid @ v_mid) + R_end @ v1)
                    R = R_end
            else:
                omega, vel, _ = self.twist(0.5 * (a + b))
                p = p + R @ (_twist_integral(omega, span) @ vel)
                R = R @ so3_exp(omega * span)
            record(b)
        return [states_at[round(t, 12)] for t in times]

    def pose_at(self, times) -> list[Pose]:
        return [Pose(R, p) for R, p, _, _, _ in self.states(times)]


def synthesize_imu(trajectory: TwistTrajectory, sensor: SensorSpec,
                   duration: float, seed=0, gravity=GRAVITY) -> list[ImuSample]:
    """IMU stream along a trajectory, inverting the measurement model."""
    n = int(math.floor(duration * sensor.imu_rate)) + 1
    times = np.arange(n) / sensor.imu_rate
    states = trajectory.states(times)
    rng = np.random.default_rng(seed)
    b_a = np.asarray(sensor.accel_bias, dtype=float)
    b_w = np.asarray(sensor.gyro_bias, dtype=float)
    samples = []
    for t, (R, _p, _v, a_world, omega_body) in zip(times, states):
        accel = R.T @ (a_world - gravity) + b_a
        gyro = omega_body + b_w
        if sensor.accel_noise_sigma > 0:
            accel = accel + rng.normal(0.0, sensor.accel_noise_sigma, 3)
        if sensor.gyro_noise_sigma > 0:
            gyro = gyro + rng.normal(0.0, sensor.gyro_noise_sigma, 3)
        samples.append(ImuSample(float(t), accel, gyro))
    return samples


@dataclass
class SessionData:
    """One recorded run: ground truth, scans (body frame), IMU stream."""

    name: str
    scan_times: np.ndarray
    gt_poses: list
    scans: list
    imu: list
    world_id: str


def simulate_session(world: World, trajectory: TwistTrajectory,
                     sensor: SensorSpec, name: str, seed: int,
                     world_id: str = "world") -> SessionData:
    n_scans = int(math.floor(trajectory.duration * sensor.scan_rate)) + 1
    scan_times = np.arange(n_scans) / sensor.scan_rate
    poses = trajectory.pose_at(scan_times)
    scans = []
    for k, (t, pose) in enumerate(zip(scan_times, poses)):
        scans.append(raycast_scan(world, pose, sensor, seed=(seed, 7, k),
                                  timestamp=float(t)))
    imu = synthesize_imu(trajectory, sensor, trajectory.duration,
                         seed=(seed, 11))
    return SessionData(name, scan_times, poses, scans, imu, world_id)


# --- scenario construction -------------------------------------------------

SCENARIOS = ("mapped_static", "changed_wall", "unmapped_loop", "reentry")


@dataclass
class Scenario:
    name: str
    prior_session: SessionData
    session: SessionData
    prior_world: World
    session_world: World
    sensor: SensorSpec
    map_resolution: float = 2.0
    promote_threshold: int = 80
    prior_crop_x: float | None = None  # drop prior points with world x beyond


def _room_spec(extra=()) -> WorldSpec:
    surfaces = [
        rect_surface("floor", 2, 0.0, (0.0, 24.0), (0.0, 12.0)),
        rect_surface("ceiling", 2, 3.0, (0.0, 24.0), (0.0, 12.0)),
        rect_surface("wall_x0", 0, 0.0, (0.0, 12.0), (0.0, 3.0)),
        rect_surface("wall_x24", 0, 24.0, (0.0, 12.0), (0.0, 3.0)),
        rect_surface("wall_y0", 1, 0.0, (0.0, 24.0), (0.0, 3.0)),
        rect_surface("wall_y12", 1, 12.0, (0.0, 24.0), (0.0, 3.0)),
        rect_surface("wall_mid", 0, 12.0, (4.0, 8.0), (0.0, 3.0)),
        box_surface("pillar_a", (5.0, 2.5, 0.0), (5.5, 3.0, 3.0)),
        box_surface("pillar_b", (9.0, 8.5, 0.0), (9.5, 9.0, 3.0)),
        box_surface("pillar_c", (16.0, 3.0, 0.0), (16.5, 3.5, 3.0)),
        box_surface("pillar_d", (20.0, 8.0, 0.0), (20.5, 8.5, 3.0)),
        box_surface("pillar_e", (13.0, 9.5, 0.0), (13.5, 10.0, 3.0)),
    ]
    return WorldSpec(tuple(surfaces) + tuple(extra))


def _loop_trajectory(start_xy, heading, straights, speed=1.0, z=1.0):
    """Rectangular loop: alternating straights and left quarter-turns."""
    omega_turn = 0.5
    turn_time = (math.pi / 2) / omega_turn
    segments = []
    for length in straights:
        segments.append(TwistSegment(length / speed, (0, 0, 0), (speed, 0, 0)))
        segments.append(TwistSegment(turn_time, (0, 0, omega_turn), (speed, 0, 0)))
    R0 = so3_exp([0, 0, heading])
    return TwistTrajectory(Pose(R0, [start_xy[0], start_xy[1], z]), segments)


def _out_and_back_trajectory(dwell_loops=0, z=1.0):
    """Leave the left half, optionally dwell in circles on the right, return."""
    speed = 1.0
    omega = 0.5
    turn = (math.pi / 2) / omega
    segments = [
        TwistSegment(14.0, (0, 0, 0), (speed, 0, 0)),       # 4 -> 18 along x
        TwistSegment(turn, (0, 0, omega), (speed, 0, 0)),   # quarter turn left
    ]
    for _ in range(dwell_loops):
        segments.append(TwistSegment(2 * math.pi / omega, (0, 0, omega),
                                     (speed, 0, 0)))        # full dwell circle
    segments += [
        TwistSegment(turn, (0, 0, omega), (speed, 0, 0)),   # complete the U-turn
        TwistSegment(14.0, (0, 0, 0), (speed, 0, 0)),       # 18 -> 4 back
    ]
    return TwistTrajectory(Pose(so3_exp([0, 0, 0.0]), [4.0, 4.5, z]), segments)


def default_sensor(noise=True) -> SensorSpec:
    return SensorSpec(
        range_noise_sigma=0.01 if noise else 0.0,
        accel_noise_sigma=0.02 if noise else 0.0,
        gyro_noise_sigma=0.002 if noise else 0.0,
    )


def make_scenario(name: str, seed: int = 0) -> Scenario:
    """Build one of the canned life-long scenarios.

    mapped_static: identical world both sessions.
    changed_wall:  the interior wall moves 1 m between sessions (plus a
                   transient cart in session 2 to exercise buffering).
    unmapped_loop: the prior map is cropped to the left half of the room;
                   the session traverses into the unmapped right half.
    reentry:       like unmapped_loop with a long dwell outside before
                   returning to the mapped area.
    """
    if name not in SCENARIOS:
        raise UnknownScenario(name)
    sensor = default_sensor()
    prior_spec = _room_spec()
    prior_world = prior_spec.build()
    # perimeter loop for the prior map: covers the whole room with margin
    prior_traj = _loop_trajectory((3.0, 2.5), 0.0, [17.0, 6.0, 17.0, 6.0])
    prior_session = simulate_session(prior_world, prior_traj, sensor,
                                     f"{name}_prior", seed * 1000 + 1, "world_prior")
    crop = None
    if name == "mapped_static":
        session_world = prior_world
        traj = _loop_trajectory((4.0, 3.5), 0.0, [15.0, 4.0, 15.0, 4.0])
    elif name == "changed_wall":
        cart = box_surface("cart", (7.0, 5.0, 0.0), (8.0, 6.0, 1.2),
                           active=(4.0, 6.0))
        spec = _room_spec(extra=(cart,))
        spec = replace(spec, edits=(("translate", "wall_mid", (1.0, 0.0, 0.0)),))
        session_world = spec.edited()
        # two laps so the moved wall's blocks accumulate enough unmatched
        # points to promote (and demote where they outnumber the prior)
        traj = _loop_trajectory((4.0, 3.5), 0.0, [15.0, 4.0, 15.0, 4.0,
                                                  15.0, 4.0, 15.0, 4.0])
    elif name == "unmapped_loop":
        session_world = prior_world
        traj = _out_and_back_trajectory(dwell_loops=0)
        crop = 12.0
    else:  # reentry
        session_world = prior_world
        traj = _out_and_back_trajectory(dwell_loops=2)
        crop = 12.0
    session = simulate_session(session_world, traj, sensor, f"{name}_session",
                               seed * 1000 + 2, "world_session")
    return Scenario(
        name=name,
        prior_session=prior_session,
        session=session,
        prior_world=prior_world,
        session_world=session_world,
        sensor=sensor,
        prior_crop_x=crop,
    )
