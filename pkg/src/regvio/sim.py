"""Deterministic synthetic room, trajectory, IMU stream and stereo tracks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factors import GRAVITY, CameraModel, Measurement
from .geometry import Plane, Pose, so3_exp, so3_log
from .mesher import Keypoint


@dataclass(frozen=True)
class ScenePlane:
    """Rectangle on ``plane`` centred at ``center`` spanned by ``axes``."""

    plane: Plane
    center: np.ndarray
    axes: tuple[np.ndarray, np.ndarray]
    half_widths: tuple[float, float]
    density: float

    def __post_init__(self):
        if min(self.half_widths) <= 0:
            raise ValueError("plane extents must be positive")

    @property
    def area(self) -> float:
        return 4.0 * self.half_widths[0] * self.half_widths[1]

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        st = rng.uniform(-1.0, 1.0, size=(count, 2)) * np.asarray(self.half_widths)
        return self.center + st[:, :1] * self.axes[0] + st[:, 1:] * self.axes[1]

    def grid(self, spacing: float) -> np.ndarray:
        hu, hv = self.half_widths
        su = np.arange(-hu, hu + 1e-12, spacing)
        sv = np.arange(-hv, hv + 1e-12, spacing)
        uu, vv = np.meshgrid(su, sv, indexing="ij")
        return self.center + uu.reshape(-1, 1) * self.axes[0] + vv.reshape(-1, 1) * self.axes[1]


@dataclass
class SimWorld:
    planes: list[ScenePlane]
    landmarks: dict[int, np.ndarray]
    plane_of: dict[int, int]
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def landmark_array(self) -> tuple[np.ndarray, np.ndarray]:
        ids = np.array(sorted(self.landmarks), dtype=np.int64)
        pts = np.array([self.landmarks[i] for i in ids]).reshape(-1, 3)
        return ids, pts

    def ground_truth_cloud(self, spacing: float = 0.02) -> np.ndarray:
        """Dense samples of every scene surface (planes) plus the free landmarks."""
        parts = [p.grid(spacing) for p in self.planes]
        free = [v for i, v in sorted(self.landmarks.items()) if i not in self.plane_of]
        if free:
            parts.append(np.array(free))
        return np.concatenate(parts) if parts else np.empty((0, 3))


@dataclass(frozen=True)
class SimConfig:
    scene: str = "room"  # room | clutter
    trajectory: str = "circle"  # circle | lissajous | stationary
    radius: float = 1.0
    period: float = 10.0
    height_amplitude: float = 0.1
    yaw_amplitude: float = 0.3
    pitch: float = 0.25
    keyframe_rate_hz: float = 2.0
    imu_rate_hz: float = 200.0
    n_keyframes: int = 50
    landmark_density: float = 3.0
    clutter_count: int = 0
    room_x: float = 3.0
    room_y: float = 3.0
    floor_z: float = -1.2
    ceiling_z: float = 1.5
    corner_margin: float = 0.25
    pixel_sigma: float = 1.0
    gyro_noise_density: float = 1.7e-4
    accel_noise_density: float = 2.0e-3
    gyro_random_walk: float = 1.9393e-5
    accel_random_walk: float = 3.0e-3
    outlier_rate: float = 0.0
    max_track_length: int = 8
    min_depth: float = 0.3
    max_depth: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.imu_rate_hz < 10 * self.keyframe_rate_hz:
            raise ValueError("IMU rate must be at least ten times the keyframe rate")
        ratio = self.imu_rate_hz / self.keyframe_rate_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("IMU rate must be an integer multiple of the keyframe rate")
        if self.scene not in ("room", "clutter"):
            raise ValueError(f"unknown scene {self.scene!r}")
        if self.trajectory not in ("circle", "lissajous", "stationary"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")

    @property
    def samples_per_keyframe(self) -> int:
        return int(round(self.imu_rate_hz / self.keyframe_rate_hz))


def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def room_planes(config: SimConfig) -> list[ScenePlane]:
    """Two walls and a floor around the trajectory.

    Rectangles stop ``corner_margin`` short of each other so no landmark sits
    on two planes at once.
    """
    x, y, zf, zc = config.room_x, config.room_y, config.floor_z, config.ceiling_z
    m = config.corner_margin
    lo = -2.0
    ex, ey, ez = np.eye(3)
    z0 = zf + m
    zc_mid = 0.5 * (z0 + zc)
    hz = 0.5 * (zc - z0)
    hw_x = 0.5 * (x - m - lo)
    hw_y = 0.5 * (y - m - lo)
    rho = config.landmark_density
    return [
        ScenePlane(Plane(ex, x), np.array([x, lo + hw_y, zc_mid]), (ey, ez), (hw_y, hz), rho),
        ScenePlane(Plane(ey, y), np.array([lo + hw_x, y, zc_mid]), (ex, ez), (hw_x, hz), rho),
        ScenePlane(Plane(ez, zf).canonical(), np.array([lo + hw_x, lo + hw_y, zf]), (ex, ey), (hw_x, hw_y), rho),
    ]


def build_scene(config: SimConfig, planes: list[ScenePlane] | None = None) -> SimWorld:
    """Landmarks sampled on each plane at its density, plus random clutter.

    The ``clutter`` scene has no planes; its points fill the volume the
    camera looks into.
    """
    rng = _streams(config.seed)[0]
    if planes is None:
        planes = room_planes(config) if config.scene == "room" else []
    landmarks: dict[int, np.ndarray] = {}
    plane_of: dict[int, int] = {}
    nid = 0
    for k, sp in enumerate(planes):
        count = int(round(sp.area * sp.density))
        for pt in sp.sample(rng, count):
            landmarks[nid] = pt
            plane_of[nid] = k
            nid += 1
    n_clutter = config.clutter_count
    if config.scene == "clutter" and n_clutter == 0:
        n_clutter = int(round(config.landmark_density * 40.0))
    if n_clutter:
        lo = np.array([-2.0, -2.0, config.floor_z])
        hi = np.array([config.room_x, config.room_y, config.ceiling_z])
        pts = rng.uniform(lo, hi, size=(n_clutter, 3))
        for pt in pts:
            landmarks[nid] = pt
            nid += 1
    return SimWorld(planes, landmarks, plane_of)


# --- trajectory ---------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySample:
    time: float
    pose: Pose
    velocity: np.ndarray
    angular_velocity: np.ndarray  # body frame
    acceleration: np.ndarray  # world frame


def _rz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _kinematics(config: SimConfig, t: float):
    """Position, velocity, acceleration, yaw and yaw rate at time ``t``."""
    w = 2.0 * np.pi / config.period
    r, h = config.radius, config.height_amplitude
    if config.trajectory == "stationary":
        z3 = np.zeros(3)
        return z3.copy(), z3.copy(), z3.copy(), np.pi / 4, 0.0
    if config.trajectory == "circle":
        p = np.array([r * np.cos(w * t), r * np.sin(w * t), h * np.sin(2 * w * t)])
        v = np.array([-r * w * np.sin(w * t), r * w * np.cos(w * t), 2 * w * h * np.cos(2 * w * t)])
        a = np.array([-r * w * w * np.cos(w * t), -r * w * w * np.sin(w * t), -4 * w * w * h * np.sin(2 * w * t)])
    else:
        p = np.array([r * np.sin(w * t), r * np.sin(2 * w * t) / 2, h * np.sin(3 * w * t)])
        v = np.array([r * w * np.cos(w * t), r * w * np.cos(2 * w * t), 3 * w * h * np.cos(3 * w * t)])
        a = np.array([-r * w * w * np.sin(w * t), -2 * r * w * w * np.sin(2 * w * t), -9 * w * w * h * np.sin(3 * w * t)])
    yaw = np.pi / 4 + config.yaw_amplitude * np.sin(w * t)
    yaw_rate = config.yaw_amplitude * w * np.cos(w * t)
    return p, v, a, yaw, yaw_rate


def simulate_trajectory(config: SimConfig) -> list[TrajectorySample]:
    """Analytic trajectory sampled at the IMU rate over all keyframe intervals."""
    n = (config.n_keyframes - 1) * config.samples_per_keyframe + 1
    dt = 1.0 / config.imu_rate_hz
    Ry = _ry(config.pitch)
    out = []
    for k in range(n):
        t = k * dt
        p, v, a, yaw, yaw_rate = _kinematics(config, t)
        R = _rz(yaw) @ Ry
        omega = Ry.T @ np.array([0.0, 0.0, yaw_rate])
        out.append(TrajectorySample(t, Pose(R, p), v, omega, a))
    return out


def keyframe_samples(traj: list[TrajectorySample], config: SimConfig) -> list[TrajectorySample]:
    return traj[:: config.samples_per_keyframe]


def simulate_imu(traj: list[TrajectorySample], config: SimConfig, noiseless: bool = False):
    """``(gyro, accel, dt)`` per IMU interval, plus the true biases per sample.

    Readings are the constant rates that carry one sample's state exactly to
    the next, so noiseless preintegration matches the trajectory up to the
    position quadrature error.
    """
    rng = _streams(config.seed)[1]
    dt = 1.0 / config.imu_rate_hz
    n = len(traj) - 1
    g = GRAVITY
    gyro = np.empty((n, 3))
    accel = np.empty((n, 3))
    for k in range(n):
        Ri, Rj = traj[k].pose.rotation, traj[k + 1].pose.rotation
        gyro[k] = so3_log(Ri.T @ Rj) / dt
        accel[k] = Ri.T @ ((traj[k + 1].velocity - traj[k].velocity) / dt - g)
    bg = np.zeros((n + 1, 3))
    ba = np.zeros((n + 1, 3))
    if not noiseless:
        sq = np.sqrt(config.imu_rate_hz)
        steps_g = rng.standard_normal((n, 3)) * config.gyro_random_walk * np.sqrt(dt)
        steps_a = rng.standard_normal((n, 3)) * config.accel_random_walk * np.sqrt(dt)
        bg[1:] = np.cumsum(steps_g, axis=0)
        ba[1:] = np.cumsum(steps_a, axis=0)
        gyro = gyro + bg[:-1] + rng.standard_normal((n, 3)) * config.gyro_noise_density * sq
        accel = accel + ba[:-1] + rng.standard_normal((n, 3)) * config.accel_noise_density * sq
    samples = [(gyro[k], accel[k], dt) for k in range(n)]
    return samples, bg, ba


# --- tracks -------------------------------------------------------------------


def default_camera() -> CameraModel:
    # camera z forward = body x, camera x right = -body y, camera y down = -body z
    R_bc = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    return CameraModel(body_T_cam=Pose(R_bc, np.array([0.05, 0.0, 0.0])))


@dataclass
class FrameTracks:
    keyframe: int
    keypoints: list[Keypoint]
    measurements: list[Measurement]
    world_ids: list[int]  # scene landmark behind each measurement


def simulate_tracks(world: SimWorld, keyframes: list[TrajectorySample], camera: CameraModel, config: SimConfig, noiseless: bool = False) -> list[FrameTracks]:
    """Stereo observations of every landmark visible in both images.

    Measurements carry *track* ids. A track ends when its point leaves the
    view or reaches ``max_track_length`` keyframes (first tracks get a random
    phase); the point is then re-detected under a new id, as a feature
    tracker without loop closure would.
    """
    rng = _streams(config.seed)[2]
    ids, pts = world.landmark_array()
    n = len(ids)
    cur = np.full(n, -1, dtype=np.int64)
    age = np.zeros(n, dtype=np.int64)
    L = config.max_track_length
    limit = rng.integers(1, L + 1, size=n) if L > 0 else np.full(n, np.iinfo(np.int64).max)
    next_id = 0
    out = []
    for k, s in enumerate(keyframes):
        R, p = s.pose.rotation, s.pose.translation
        pb = (pts - p) @ R
        pc = (pb - camera.body_T_cam.translation) @ camera.body_T_cam.rotation
        X_, Y_, Z_ = pc[:, 0], pc[:, 1], pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uL = camera.fx * X_ / Z_ + camera.cx
            uR = camera.fx * (X_ - camera.baseline) / Z_ + camera.cx
            v = camera.fy * Y_ / Z_ + camera.cy
        vis = (
            (Z_ > config.min_depth)
            & (Z_ < config.max_depth)
            & (uL >= 0) & (uL < camera.width)
            & (uR >= 0) & (uR < camera.width)
            & (v >= 0) & (v < camera.height)
        )
        idx = np.flatnonzero(vis)
        pix = np.column_stack([uL[idx], uR[idx], v[idx]])
        if not noiseless:
            pix = pix + rng.standard_normal(pix.shape) * config.pixel_sigma
            if config.outlier_rate > 0:
                bad = rng.random(len(idx)) < config.outlier_rate
                pix[bad, 0] = rng.uniform(0, camera.width, bad.sum())
                pix[bad, 2] = rng.uniform(0, camera.height, bad.sum())
                pix[bad, 1] = pix[bad, 0] - rng.uniform(1.0, 40.0, bad.sum())
        ok = pix[:, 0] - pix[:, 1] > 0
        seen = np.zeros(n, dtype=bool)
        seen[idx[ok]] = True
        cur[~seen] = -1
        kps, meas, wids = [], [], []
        for i, row in zip(idx[ok], pix[ok]):
            if cur[i] < 0 or age[i] >= limit[i]:
                if cur[i] >= 0 and L > 0:
                    limit[i] = L
                cur[i] = next_id
                next_id += 1
                age[i] = 0
            age[i] += 1
            tid = int(cur[i])
            kps.append(Keypoint(tid, (float(row[0]), float(row[2]))))
            meas.append(Measurement(k, tid, row.copy()))
            wids.append(int(ids[i]))
        out.append(FrameTracks(k, kps, meas, wids))
    return out
