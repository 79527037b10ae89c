"""Residuals and analytic Jacobians for the estimator's factor types.

State tangent ordering is ``[rotation, position, velocity, gyro bias, accel
bias]`` (15 entries). Rotations are perturbed on the right, everything else is
Euclidean. All residuals here are unwhitened; noise models are applied by the
factor graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import (
    Plane,
    Pose,
    right_jacobian,
    right_jacobian_batch,
    right_jacobian_inv,
    right_jacobian_inv_batch,
    s2_retract,
    s2_retract_jacobian,
    skew,
    skew_batch,
    so3_exp,
    so3_exp_batch,
    so3_log,
    so3_log_batch,
)

GRAVITY = np.array([0.0, 0.0, -9.81])
STATE_DIM = 15
ROT, POS, VEL, BG, BA = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


class CheiralityError(ValueError):
    """A landmark projects behind a camera."""


class DegenerateTriangulation(ValueError):
    """Too few observations or an ill-conditioned linear triangulation."""


@dataclass(frozen=True)
class NavState:
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.position)

    def retract(self, delta: np.ndarray) -> "NavState":
        return NavState(
            self.rotation @ so3_exp(delta[ROT]),
            self.position + delta[POS],
            self.velocity + delta[VEL],
            self.bias_gyro + delta[BG],
            self.bias_accel + delta[BA],
        )

    def local(self, other: "NavState") -> np.ndarray:
        """Tangent vector ``d`` with ``self.retract(d) == other``."""
        return np.concatenate(
            [
                so3_log(self.rotation.T @ other.rotation),
                other.position - self.position,
                other.velocity - self.velocity,
                other.bias_gyro - self.bias_gyro,
                other.bias_accel - self.bias_accel,
            ]
        )


@dataclass(frozen=True)
class CameraModel:
    """Rectified stereo pinhole camera rigidly mounted on the body (IMU) frame."""

    fx: float = 400.0
    fy: float = 400.0
    cx: float = 376.0
    cy: float = 240.0
    baseline: float = 0.11
    body_T_cam: Pose = field(default_factory=Pose.identity)
    width: int = 752
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.baseline <= 0:
            raise ValueError("fx, fy and baseline must be positive")

    def project_stereo(self, p_cam: np.ndarray) -> np.ndarray:
        X, Y, Z = p_cam
        return np.array(
            [
                self.fx * X / Z + self.cx,
                self.fx * (X - self.baseline) / Z + self.cx,
                self.fy * Y / Z + self.cy,
            ]
        )


@dataclass(frozen=True)
class Measurement:
    """Pixel observation; ``pixel`` is ``(u, v)`` (mono) or ``(u_left, u_right, v)`` (stereo)."""

    keyframe: int
    landmark: int
    pixel: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixel, dtype=float)
        if px.shape not in ((2,), (3,)):
            raise ValueError("pixel must have 2 (mono) or 3 (stereo) entries")
        if px.shape == (3,) and not px[0] - px[1] > 0:
            raise ValueError("stereo disparity must be positive")
        object.__setattr__(self, "pixel", px)

    @property
    def is_stereo(self) -> bool:
        return self.pixel.shape == (3,)


@dataclass(frozen=True)
class NoiseParams:
    pixel_sigma: float = 1.0
    gyro_noise_density: float = 1.7e-4
    accel_noise_density: float = 2.0e-3
    gyro_random_walk: float = 1.9393e-5
    accel_random_walk: float = 3.0e-3
    regularity_sigma: float = 0.05
    prior_rotation_sigma: float = 1e-3
    prior_position_sigma: float = 1e-3
    prior_velocity_sigma: float = 1e-2
    prior_gyro_bias_sigma: float = 1e-3
    prior_accel_bias_sigma: float = 1e-2

    def prior_sigmas(self) -> np.ndarray:
        return np.repeat(
            [
                self.prior_rotation_sigma,
                self.prior_position_sigma,
                self.prior_velocity_sigma,
                self.prior_gyro_bias_sigma,
                self.prior_accel_bias_sigma,
            ],
            3,
        )


# --- IMU preintegration ----------------------------------------------------


@dataclass(frozen=True)
class PreintegratedImu:
    """Relative motion accumulated in the body frame of the first keyframe.

    ``covariance`` is ordered ``[rotation, velocity, position]``. The ``d_*``
    arrays are first-order sensitivities to the bias used for integration.
    """

    delta_rotation: np.ndarray
    delta_velocity: np.ndarray
    delta_position: np.ndarray
    duration: float
    bias_gyro: np.ndarray
    bias_accel: np.ndarray
    covariance: np.ndarray
    dR_dbg: np.ndarray
    dv_dbg: np.ndarray
    dv_dba: np.ndarray
    dp_dbg: np.ndarray
    dp_dba: np.ndarray

    def corrected(self, bias_gyro: np.ndarray, bias_accel: np.ndarray):
        """(dR, dv, dp) re-expressed at a new bias to first order."""
        dbg = bias_gyro - self.bias_gyro
        dba = bias_accel - self.bias_accel
        dR = self.delta_rotation @ so3_exp(self.dR_dbg @ dbg)
        dv = self.delta_velocity + self.dv_dbg @ dbg + self.dv_dba @ dba
        dp = self.delta_position + self.dp_dbg @ dbg + self.dp_dba @ dba
        return dR, dv, dp


def imu_preintegrate(
    samples: Sequence,
    bias_gyro=np.zeros(3),
    bias_accel=np.zeros(3),
    gyro_noise_density: float = 1.7e-4,
    accel_noise_density: float = 2.0e-3,
) -> PreintegratedImu:
    """Accumulate ``(gyro, accel, dt)`` samples with first-order integration.

    Gravity is not included; it enters in :func:`imu_residual`.
    """
    if len(samples) == 0:
        raise ValueError("cannot preintegrate an empty interval")
    bg = np.asarray(bias_gyro, dtype=float)
    ba = np.asarray(bias_accel, dtype=float)
    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    T = 0.0
    cov = np.zeros((9, 9))
    dR_dbg = np.zeros((3, 3))
    dv_dbg = np.zeros((3, 3))
    dv_dba = np.zeros((3, 3))
    dp_dbg = np.zeros((3, 3))
    dp_dba = np.zeros((3, 3))
    A = np.eye(9)
    Bg = np.zeros((9, 3))
    Ba = np.zeros((9, 3))
    I3 = np.eye(3)
    for gyro, accel, dt in samples:
        dt = float(dt)
        if dt <= 0:
            raise ValueError("sample dt must be positive")
        w = np.asarray(gyro, dtype=float) - bg
        a = np.asarray(accel, dtype=float) - ba
        step = so3_exp(w * dt)
        Jr = right_jacobian(w * dt)
        dRa = dR @ skew(a)

        A[0:3, 0:3] = step.T
        A[3:6, 0:3] = -dRa * dt
        A[6:9, 0:3] = -0.5 * dRa * dt * dt
        A[6:9, 3:6] = I3 * dt
        Bg[0:3] = Jr * dt
        Ba[3:6] = dR * dt
        Ba[6:9] = 0.5 * dR * dt * dt
        cov = (
            A @ cov @ A.T
            + (gyro_noise_density**2 / dt) * Bg @ Bg.T
            + (accel_noise_density**2 / dt) * Ba @ Ba.T
        )

        dp_dba = dp_dba + dv_dba * dt - 0.5 * dR * dt * dt
        dp_dbg = dp_dbg + dv_dbg * dt - 0.5 * dRa @ dR_dbg * dt * dt
        dv_dba = dv_dba - dR * dt
        dv_dbg = dv_dbg - dRa @ dR_dbg * dt
        dR_dbg = step.T @ dR_dbg - Jr * dt

        dp = dp + dv * dt + 0.5 * dR @ a * dt * dt
        dv = dv + dR @ a * dt
        dR = dR @ step
        T += dt
    return PreintegratedImu(dR, dv, dp, T, bg.copy(), ba.copy(), 0.5 * (cov + cov.T), dR_dbg, dv_dbg, dv_dba, dp_dbg, dp_dba)


def compose_preintegrated(a: PreintegratedImu, b: PreintegratedImu) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Deltas of ``a`` followed by ``b`` (both at the same bias)."""
    dR = a.delta_rotation @ b.delta_rotation
    dv = a.delta_velocity + a.delta_rotation @ b.delta_velocity
    dp = a.delta_position + a.delta_velocity * b.duration + a.delta_rotation @ b.delta_position
    return dR, dv, dp, a.duration + b.duration


def imu_propagate(x: NavState, pim: PreintegratedImu, gravity=GRAVITY) -> NavState:
    """State at the end of ``pim`` reached exactly from ``x`` (zero residual)."""
    dR, dv, dp = pim.corrected(x.bias_gyro, x.bias_accel)
    T = pim.duration
    R = x.rotation
    return NavState(
        R @ dR,
        x.position + x.velocity * T + 0.5 * gravity * T * T + R @ dp,
        x.velocity + gravity * T + R @ dv,
        x.bias_gyro.copy(),
        x.bias_accel.copy(),
    )


def imu_residual(xi: NavState, xj: NavState, pim: PreintegratedImu, gravity=GRAVITY) -> np.ndarray:
    """15-vector ``[rotation, velocity, position, gyro bias, accel bias]`` error."""
    return imu_residual_and_jacobians(xi, xj, pim, gravity)[0]


def imu_residual_and_jacobians(xi: NavState, xj: NavState, pim: PreintegratedImu, gravity=GRAVITY):
    gravity = np.asarray(gravity, dtype=float)
    T = pim.duration
    Ri = xi.rotation
    dbg = xi.bias_gyro - pim.bias_gyro
    phi = pim.dR_dbg @ dbg
    dR, dv, dp = pim.corrected(xi.bias_gyro, xi.bias_accel)
    E = dR.T @ Ri.T @ xj.rotation
    rR = so3_log(E)
    wv = xj.velocity - xi.velocity - gravity * T
    wp = xj.position - xi.position - xi.velocity * T - 0.5 * gravity * T * T
    rv = Ri.T @ wv - dv
    rp = Ri.T @ wp - dp
    r = np.concatenate([rR, rv, rp, xj.bias_gyro - xi.bias_gyro, xj.bias_accel - xi.bias_accel])

    Jrinv = right_jacobian_inv(rR)
    Ji = np.zeros((15, 15))
    Jj = np.zeros((15, 15))
    Ji[0:3, ROT] = -Jrinv @ xj.rotation.T @ Ri
    Ji[0:3, BG] = -Jrinv @ E.T @ right_jacobian(phi) @ pim.dR_dbg
    Jj[0:3, ROT] = Jrinv

    Ji[3:6, ROT] = skew(Ri.T @ wv)
    Ji[3:6, VEL] = -Ri.T
    Ji[3:6, BG] = -pim.dv_dbg
    Ji[3:6, BA] = -pim.dv_dba
    Jj[3:6, VEL] = Ri.T

    Ji[6:9, ROT] = skew(Ri.T @ wp)
    Ji[6:9, POS] = -Ri.T
    Ji[6:9, VEL] = -Ri.T * T
    Ji[6:9, BG] = -pim.dp_dbg
    Ji[6:9, BA] = -pim.dp_dba
    Jj[6:9, POS] = Ri.T

    Ji[9:15, 9:15] = -np.eye(6)
    Jj[9:15, 9:15] = np.eye(6)
    return r, Ji, Jj


def stack_preintegrated(pims: Sequence[PreintegratedImu]) -> dict[str, np.ndarray]:
    """Field-wise stacked arrays of several preintegrated intervals."""
    names = ("delta_rotation", "delta_velocity", "delta_position", "duration", "bias_gyro", "bias_accel",
             "dR_dbg", "dv_dbg", "dv_dba", "dp_dbg", "dp_dba")
    return {n: np.array([getattr(p, n) for p in pims], dtype=float) for n in names}


def imu_residual_batch(xi: dict, xj: dict, P: dict, gravity=GRAVITY, jacobians: bool = True):
    """Vectorized :func:`imu_residual_and_jacobians`.

    ``xi``/``xj`` map ``R, p, v, bg, ba`` to stacked arrays; ``P`` comes from
    :func:`stack_preintegrated`. Returns ``(r (N,15), Ji, Jj)``.
    """
    g = np.asarray(gravity, dtype=float)
    T = P["duration"]
    Ri, Rj = xi["R"], xj["R"]
    RiT = np.transpose(Ri, (0, 2, 1))
    dbg = xi["bg"] - P["bias_gyro"]
    dba = xi["ba"] - P["bias_accel"]
    phi = np.einsum("nij,nj->ni", P["dR_dbg"], dbg)
    dR = P["delta_rotation"] @ so3_exp_batch(phi)
    dv = P["delta_velocity"] + np.einsum("nij,nj->ni", P["dv_dbg"], dbg) + np.einsum("nij,nj->ni", P["dv_dba"], dba)
    dp = P["delta_position"] + np.einsum("nij,nj->ni", P["dp_dbg"], dbg) + np.einsum("nij,nj->ni", P["dp_dba"], dba)
    E = np.transpose(dR, (0, 2, 1)) @ RiT @ Rj
    rR = so3_log_batch(E)
    wv = xj["v"] - xi["v"] - g * T[:, None]
    wp = xj["p"] - xi["p"] - xi["v"] * T[:, None] - 0.5 * g * (T * T)[:, None]
    bv = np.einsum("nij,nj->ni", RiT, wv)
    bp = np.einsum("nij,nj->ni", RiT, wp)
    r = np.concatenate([rR, bv - dv, bp - dp, xj["bg"] - xi["bg"], xj["ba"] - xi["ba"]], axis=1)
    if not jacobians:
        return r, None, None
    n = len(r)
    Jrinv = right_jacobian_inv_batch(rR)
    Ji = np.zeros((n, 15, 15))
    Jj = np.zeros((n, 15, 15))
    Ji[:, 0:3, ROT] = -Jrinv @ np.transpose(Rj, (0, 2, 1)) @ Ri
    Ji[:, 0:3, BG] = -Jrinv @ np.transpose(E, (0, 2, 1)) @ right_jacobian_batch(phi) @ P["dR_dbg"]
    Jj[:, 0:3, ROT] = Jrinv
    Ji[:, 3:6, ROT] = skew_batch(bv)
    Ji[:, 3:6, VEL] = -RiT
    Ji[:, 3:6, BG] = -P["dv_dbg"]
    Ji[:, 3:6, BA] = -P["dv_dba"]
    Jj[:, 3:6, VEL] = RiT
    Ji[:, 6:9, ROT] = skew_batch(bp)
    Ji[:, 6:9, POS] = -RiT
    Ji[:, 6:9, VEL] = -RiT * T[:, None, None]
    Ji[:, 6:9, BG] = -P["dp_dbg"]
    Ji[:, 6:9, BA] = -P["dp_dba"]
    Jj[:, 6:9, POS] = RiT
    idx = np.arange(9, 15)
    Ji[:, idx, idx] = -1.0
    Jj[:, idx, idx] = 1.0
    return r, Ji, Jj


def imu_covariance(pim: PreintegratedImu, gyro_random_walk: float, accel_random_walk: float) -> np.ndarray:
    cov = np.zeros((15, 15))
    cov[:9, :9] = pim.covariance
    cov[9:12, 9:12] = np.eye(3) * gyro_random_walk**2 * pim.duration
    cov[12:15, 12:15] = np.eye(3) * accel_random_walk**2 * pim.duration
    return cov


# --- prior -----------------------------------------------------------------


def prior_residual(x: NavState, x_prior: NavState) -> np.ndarray:
    return x_prior.local(x)


def prior_jacobian(x: NavState, x_prior: NavState) -> np.ndarray:
    J = np.eye(15)
    J[ROT, ROT] = right_jacobian_inv(so3_log(x_prior.rotation.T @ x.rotation))
    return J


# --- projection ------------------------------------------------------------


def camera_points(R: np.ndarray, p: np.ndarray, l: np.ndarray, cam: CameraModel):
    """Landmarks in body and left-camera coordinates for batched states.

    ``R (N,3,3)``, ``p (N,3)``, ``l (N,3)``.
    """
    pb = np.einsum("nji,nj->ni", R, l - p)
    Rbc = cam.body_T_cam.rotation
    pc = (pb - cam.body_T_cam.translation) @ Rbc
    return pb, pc


def stereo_residual_batch(R, p, l, meas, cam: CameraModel, jacobians: bool = True):
    """Batched stereo reprojection error and Jacobians.

    Returns ``(r (N,3), J_state (N,3,15), J_landmark (N,3,3), depth (N,))``.
    Columns of ``J_state`` beyond rotation and position are zero.
    """
    pb, pc = camera_points(R, p, l, cam)
    X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
    Zs = np.where(np.abs(Z) > 1e-12, Z, 1e-12)
    iz = 1.0 / Zs
    pred = np.stack(
        [cam.fx * X * iz + cam.cx, cam.fx * (X - cam.baseline) * iz + cam.cx, cam.fy * Y * iz + cam.cy],
        axis=1,
    )
    r = pred - meas
    if not jacobians:
        return r, None, None, Z
    n = len(pc)
    dproj = np.zeros((n, 3, 3))
    dproj[:, 0, 0] = cam.fx * iz
    dproj[:, 0, 2] = -cam.fx * X * iz * iz
    dproj[:, 1, 0] = cam.fx * iz
    dproj[:, 1, 2] = -cam.fx * (X - cam.baseline) * iz * iz
    dproj[:, 2, 1] = cam.fy * iz
    dproj[:, 2, 2] = -cam.fy * Y * iz * iz
    Rcb = cam.body_T_cam.rotation.T
    D = dproj @ Rcb  # d residual / d body point
    Jx = np.zeros((n, 3, 15))
    Jx[:, :, ROT] = D @ skew_batch(pb)
    RT = np.transpose(R, (0, 2, 1))
    Jl = D @ RT
    Jx[:, :, POS] = -Jl
    return r, Jx, Jl, Z


def mono_residual_batch(R, p, l, meas, cam: CameraModel, jacobians: bool = True):
    r3, Jx, Jl, Z = stereo_residual_batch(R, p, l, np.column_stack([meas[:, 0], meas[:, 0], meas[:, 1]]), cam, jacobians)
    keep = [0, 2]
    if not jacobians:
        return r3[:, keep], None, None, Z
    return r3[:, keep], Jx[:, keep], Jl[:, keep], Z


def projection_residual(pose: NavState, landmark, meas: Measurement, cam: CameraModel) -> np.ndarray:
    return projection_residual_and_jacobians(pose, landmark, meas, cam)[0]


def projection_residual_and_jacobians(pose: NavState, landmark, meas: Measurement, cam: CameraModel):
    """Predicted minus measured pixels, with Jacobians w.r.t. state and landmark."""
    R = pose.rotation[None]
    p = pose.position[None]
    l = np.asarray(landmark, dtype=float)[None]
    if meas.is_stereo:
        r, Jx, Jl, Z = stereo_residual_batch(R, p, l, meas.pixel[None], cam)
    else:
        r, Jx, Jl, Z = mono_residual_batch(R, p, l, meas.pixel[None], cam)
    if not Z[0] > 0:
        raise CheiralityError(f"landmark {meas.landmark} behind keyframe {meas.keyframe}")
    return r[0], Jx[0], Jl[0]


# --- triangulation and structureless factors --------------------------------


def observation_rays(R, p, pixels, cam: CameraModel):
    """Camera centers and unit ray directions in world, one or two per observation.

    Stereo observations contribute a left and a right ray.
    """
    Rwc = R @ cam.body_T_cam.rotation
    c_left = p + np.einsum("nij,j->ni", R, cam.body_T_cam.translation)
    pixels = np.asarray(pixels, dtype=float)
    stereo = pixels.shape[1] == 3
    v = pixels[:, 2] if stereo else pixels[:, 1]
    dirs_l = np.stack([(pixels[:, 0] - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones(len(pixels))], axis=1)
    rays_l = np.einsum("nij,nj->ni", Rwc, dirs_l)
    if not stereo:
        return c_left, rays_l / np.linalg.norm(rays_l, axis=1, keepdims=True)
    c_right = c_left + Rwc[:, :, 0] * cam.baseline
    dirs_r = np.stack([(pixels[:, 1] - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones(len(pixels))], axis=1)
    rays_r = np.einsum("nij,nj->ni", Rwc, dirs_r)
    centers = np.concatenate([c_left, c_right])
    rays = np.concatenate([rays_l, rays_r])
    return centers, rays / np.linalg.norm(rays, axis=1, keepdims=True)


def triangulate_rays(centers: np.ndarray, rays: np.ndarray, max_condition: float = 1e8) -> np.ndarray:
    """Point minimizing the summed squared distance to a set of rays."""
    P = np.eye(3)[None] - rays[:, :, None] * rays[:, None, :]
    A = P.sum(axis=0)
    b = np.einsum("nij,nj->i", P, centers)
    if np.linalg.cond(A) > max_condition:
        raise DegenerateTriangulation("rays are nearly parallel")
    return np.linalg.solve(A, b)


def triangulate_rays_batch(centers, rays, group, n_groups, max_condition: float = 1e8):
    """Vectorized :func:`triangulate_rays` for rays grouped by landmark index.

    Returns ``(points (G,3), ok (G,))``.
    """
    P = np.eye(3)[None] - rays[:, :, None] * rays[:, None, :]
    A = np.zeros((n_groups, 3, 3))
    b = np.zeros((n_groups, 3))
    np.add.at(A, group, P)
    np.add.at(b, group, np.einsum("nij,nj->ni", P, centers))
    ok = np.linalg.cond(A) <= max_condition
    pts = np.zeros((n_groups, 3))
    if ok.any():
        pts[ok] = np.linalg.solve(A[ok], b[ok][:, :, None])[:, :, 0]
    return pts, ok


def triangulate(poses: Sequence[NavState], meas: Sequence[Measurement], cam: CameraModel) -> np.ndarray:
    R = np.array([x.rotation for x in poses])
    p = np.array([x.position for x in poses])
    pixels = np.array([m.pixel for m in meas])
    centers, rays = observation_rays(R, p, pixels, cam)
    return triangulate_rays(centers, rays)


def _stack_projection(poses, meas, cam, landmark):
    R = np.array([x.rotation for x in poses])
    p = np.array([x.position for x in poses])
    pixels = np.array([m.pixel for m in meas])
    l = np.repeat(np.asarray(landmark, dtype=float)[None], len(poses), axis=0)
    if meas[0].is_stereo:
        r, Jx, Jl, Z = stereo_residual_batch(R, p, l, pixels, cam)
    else:
        r, Jx, Jl, Z = mono_residual_batch(R, p, l, pixels, cam)
    if np.any(Z <= 0):
        raise CheiralityError("triangulated landmark behind an observing camera")
    return r, Jx, Jl


def structureless_dimension(meas: Sequence[Measurement]) -> int:
    k = len(meas)
    return (3 * k if meas and meas[0].is_stereo else 2 * k) - 3


def structureless_linearize(poses: Sequence[NavState], meas: Sequence[Measurement], cam: CameraModel, basis: np.ndarray | None = None):
    """Null-space projected reprojection error with the landmark eliminated.

    The landmark is triangulated from ``poses``; the stacked error ``e`` and
    its Jacobians ``F`` (states) and ``E`` (landmark) are projected with an
    orthonormal basis ``Q`` of the left null space of ``E``. Returns
    ``(Q^T e, [Q^T F_k], Q, landmark)``. Passing ``basis`` freezes ``Q``.
    """
    if len(poses) != len(meas) or not meas:
        raise DegenerateTriangulation("need matching, non-empty poses and measurements")
    stereo = meas[0].is_stereo
    if len(meas) < (1 if stereo else 2):
        raise DegenerateTriangulation("not enough observations to triangulate")
    landmark = triangulate(poses, meas, cam)
    r, Jx, Jl = _stack_projection(poses, meas, cam, landmark)
    m = r.shape[1]
    e = r.reshape(-1)
    E = Jl.reshape(-1, 3)
    if basis is None:
        Qfull, _ = np.linalg.qr(E, mode="complete")
        basis = Qfull[:, 3:]
    res = basis.T @ e
    blocks = [basis[k * m : (k + 1) * m].T @ Jx[k] for k in range(len(meas))]
    return res, blocks, basis, landmark


def structureless_residual(poses: Sequence[NavState], meas: Sequence[Measurement], cam: CameraModel, basis: np.ndarray | None = None) -> np.ndarray:
    return structureless_linearize(poses, meas, cam, basis)[0]


# --- regularity ------------------------------------------------------------


def regularity_residual(plane_lin: Plane, v, d: float, landmark) -> float:
    """Landmark-to-plane distance with the normal retracted from ``plane_lin``."""
    n = s2_retract(plane_lin.normal, v)
    return float(n @ np.asarray(landmark, dtype=float) - d)


def regularity_jacobians(plane_lin: Plane, v, d: float, landmark):
    """Derivatives of :func:`regularity_residual` w.r.t. ``(v, d, landmark)``."""
    rho = np.asarray(landmark, dtype=float)
    n = s2_retract(plane_lin.normal, v)
    dv = rho @ s2_retract_jacobian(plane_lin.normal, v)
    return dv, -1.0, n


def with_bias(x: NavState, bias_gyro, bias_accel) -> NavState:
    return replace(x, bias_gyro=np.asarray(bias_gyro, float), bias_accel=np.asarray(bias_accel, float))
