"""Rotation, pose and unit-sphere primitives.

Rotations are plain 3x3 ``numpy`` arrays. Perturbations are applied on the
right, ``R <- R @ so3_exp(delta)``, everywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(v: np.ndarray) -> np.ndarray:
    """Stack of skew matrices for an ``(N, 3)`` array."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_exp(omega) -> np.ndarray:
    """Rodrigues exponential of a rotation vector (radians)."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`so3_exp`, returning a vector with norm in [0, pi]."""
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta < _SMALL_ANGLE:
        return w
    if np.pi - theta > 1e-6:
        return w * (theta / s)
    # near pi the antisymmetric part vanishes; read the axis off R + I
    B = 0.5 * (R + np.eye(3))
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def right_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (
        np.eye(3)
        - (1.0 - np.cos(theta)) / theta**2 * K
        + (theta - np.sin(theta)) / theta**3 * K @ K
    )


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-5:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * K @ K


def so3_exp_batch(omega: np.ndarray) -> np.ndarray:
    """Row-wise :func:`so3_exp` for ``(N, 3)`` input."""
    theta = np.linalg.norm(omega, axis=-1)
    K = skew_batch(omega)
    small = theta < 1e-5
    ts = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(ts) / ts)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(ts)) / ts**2)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def so3_log_batch(R: np.ndarray) -> np.ndarray:
    """Row-wise :func:`so3_log` for ``(N, 3, 3)`` input."""
    w = 0.5 * np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    s = np.linalg.norm(w, axis=1)
    c = 0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0)
    theta = np.arctan2(s, c)
    small = theta < _SMALL_ANGLE
    f = np.where(small, 1.0, theta / np.where(small, 1.0, s))
    out = w * f[:, None]
    for i in np.flatnonzero(np.pi - theta <= 1e-6):
        out[i] = so3_log(R[i])
    return out


def right_jacobian_batch(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    K = skew_batch(phi)
    small = theta < 1e-5
    ts = np.where(small, 1.0, theta)
    a = np.where(small, 0.5, (1.0 - np.cos(ts)) / ts**2)
    b = np.where(small, 1.0 / 6.0, (ts - np.sin(ts)) / ts**3)
    return np.eye(3) - a[:, None, None] * K + b[:, None, None] * (K @ K)


def right_jacobian_inv_batch(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    K = skew_batch(phi)
    small = theta < 1e-5
    ts = np.where(small, 1.0, theta)
    c = np.where(small, 1.0 / 12.0 + theta**2 / 720.0, 1.0 / ts**2 - (1.0 + np.cos(ts)) / (2.0 * ts * np.sin(ts)))
    return np.eye(3) + 0.5 * K + c[:, None, None] * (K @ K)


def project_to_so3(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping points from a child frame into a parent frame."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        return Pose(np.array(T[:3, :3], dtype=float), np.array(T[:3, 3], dtype=float))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __mul__ = compose

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to a single 3-vector or an ``(N, 3)`` array."""
        return np.asarray(points) @ self.rotation.T + self.translation


# --- unit sphere -----------------------------------------------------------


def s2_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent basis (b1, b2) at unit vector ``n``.

    Uses the coordinate axis least aligned with ``n`` (lowest index on ties):
    ``b1 = normalize(e x n)``, ``b2 = n x b1``.
    """
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    b1 = np.cross(e, n)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(n, b1)
    return b1, b2


def s2_retract(n: np.ndarray, v) -> np.ndarray:
    """Exponential map on the sphere at ``n`` along tangent coordinates ``v``."""
    n = np.asarray(n, dtype=float)
    v = np.asarray(v, dtype=float)
    if not v.any():
        return n.copy()
    b1, b2 = s2_basis(n)
    u = v[0] * b1 + v[1] * b2
    theta = float(np.linalg.norm(u))
    if theta < _SMALL_ANGLE:
        out = n + u
    else:
        out = np.cos(theta) * n + (np.sin(theta) / theta) * u
    return out / np.linalg.norm(out)


def s2_retract_jacobian(n: np.ndarray, v) -> np.ndarray:
    """3x2 derivative of :func:`s2_retract` with respect to ``v``.

    Ignores the final renormalization, which is the identity on exact values.
    """
    n = np.asarray(n, dtype=float)
    v = np.asarray(v, dtype=float)
    b1, b2 = s2_basis(n)
    B = np.column_stack([b1, b2])
    u = B @ v
    theta = float(np.linalg.norm(u))
    if theta < 1e-6:
        # d/du [cos|u| n + sinc|u| u] up to first order in u
        dfdu = np.eye(3) - np.outer(n, u) - np.outer(u, u) / 3.0
    else:
        uh = u / theta
        sinc = np.sin(theta) / theta
        dsinc = (theta * np.cos(theta) - np.sin(theta)) / theta**2
        dfdu = -np.sin(theta) * np.outer(n, uh) + sinc * np.eye(3) + dsinc * np.outer(u, uh)
    return dfdu @ B


def s2_local(n0: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Inverse of :func:`s2_retract`: tangent coordinates at ``n0`` reaching ``n``."""
    b1, b2 = s2_basis(n0)
    c = float(np.clip(n0 @ n, -1.0, 1.0))
    theta = float(np.arccos(c))
    f = 1.0 if theta < 1e-8 else theta / np.sin(theta)
    return f * np.array([b1 @ n, b2 @ n])


def s2_local_jacobian(n0: np.ndarray, n: np.ndarray) -> np.ndarray:
    """2x3 derivative of ``s2_local(n0, m)`` with respect to ``m`` at ``m = n``."""
    b1, b2 = s2_basis(n0)
    B0t = np.vstack([b1, b2])
    c = float(np.clip(n0 @ n, -1.0, 1.0))
    theta = float(np.arccos(c))
    if theta < 1e-4:
        f, g = 1.0 + theta**2 / 6.0, 1.0 / 3.0 + theta**2 * 2.0 / 15.0
    else:
        s = np.sin(theta)
        f = theta / s
        g = (s - theta * np.cos(theta)) / s**3
    return f * B0t - g * np.outer(B0t @ n, n0)


# --- planes ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane ``{x : normal . x = distance}`` with unit normal."""

    normal: np.ndarray
    distance: float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Plane):
            return NotImplemented
        return bool(np.array_equal(self.normal, other.normal)) and self.distance == other.distance

    __hash__ = None  # type: ignore[assignment]

    def canonical(self) -> "Plane":
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-15:
            n = n / norm
        d = float(self.distance)
        k = int(np.argmax(np.abs(n)))
        if n[k] < 0.0 or (n[k] == 0.0 and d < 0.0):
            n, d = -n, -d
        return Plane(n, d)

    def signed_distance(self, point) -> float:
        return point_plane_signed_distance(self, point)


def point_plane_signed_distance(plane: Plane, point) -> float:
    return float(np.asarray(plane.normal) @ np.asarray(point, dtype=float) - plane.distance)


def angle_between_normals(n1: np.ndarray, n2: np.ndarray) -> float:
    """Unsigned angle in [0, pi/2] between two plane normals (sign-agnostic)."""
    c = abs(float(np.clip(n1 @ n2, -1.0, 1.0)))
    return float(np.arccos(min(c, 1.0)))
