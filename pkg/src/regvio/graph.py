"""Symbols, values and factor types of the estimation problem.

Every factor exposes ``keys`` and ``linearize(values)`` returning the
whitened residual and one whitened Jacobian block per key. The solver has
vectorized fast paths for the high-volume factor types but this interface is
the reference behaviour.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .factors import (
    GRAVITY,
    CameraModel,
    CheiralityError,
    DegenerateTriangulation,
    Measurement,
    NavState,
    PreintegratedImu,
    imu_residual_and_jacobians,
    prior_jacobian,
    prior_residual,
    projection_residual_and_jacobians,
    structureless_linearize,
)
from .geometry import (
    Plane,
    right_jacobian_inv,
    s2_basis,
    s2_local,
    s2_local_jacobian,
    s2_retract,
    so3_log,
)

STATE, LANDMARK, PLANE = "x", "l", "p"


class Symbol(NamedTuple):
    kind: str
    index: int

    def __repr__(self) -> str:
        return f"{self.kind}{self.index}"


def X(i: int) -> Symbol:
    return Symbol(STATE, int(i))


def L(i: int) -> Symbol:
    return Symbol(LANDMARK, int(i))


def P(i: int) -> Symbol:
    return Symbol(PLANE, int(i))


DIMS = {STATE: 15, LANDMARK: 3, PLANE: 3}

Values = dict  # Symbol -> NavState | np.ndarray | Plane


def check_value(sym: Symbol, value) -> None:
    expected = {STATE: NavState, LANDMARK: np.ndarray, PLANE: Plane}[sym.kind]
    if not isinstance(value, expected):
        raise TypeError(f"{sym!r} expects {expected.__name__}, got {type(value).__name__}")


def retract(sym: Symbol, value, delta: np.ndarray):
    if sym.kind == STATE:
        return value.retract(delta)
    if sym.kind == LANDMARK:
        return value + delta
    n = s2_retract(value.normal, delta[:2])
    return Plane(n, float(value.distance + delta[2]))


def local(sym: Symbol, v0, v) -> np.ndarray:
    """Tangent coordinates of ``v`` at ``v0``."""
    if sym.kind == STATE:
        return v0.local(v)
    if sym.kind == LANDMARK:
        return v - v0
    s = 1.0 if float(v0.normal @ v.normal) >= 0.0 else -1.0
    return np.concatenate([s2_local(v0.normal, s * v.normal), [s * v.distance - v0.distance]])


def local_jacobian(sym: Symbol, v0, v) -> np.ndarray:
    """Derivative of ``local(v0, retract(v, d))`` with respect to ``d`` at zero."""
    if sym.kind == STATE:
        J = np.eye(15)
        J[:3, :3] = right_jacobian_inv(so3_log(v0.rotation.T @ v.rotation))
        return J
    if sym.kind == LANDMARK:
        return np.eye(3)
    s = 1.0 if float(v0.normal @ v.normal) >= 0.0 else -1.0
    b1, b2 = s2_basis(v.normal)
    J = np.zeros((3, 3))
    J[:2, :2] = s * s2_local_jacobian(v0.normal, s * v.normal) @ np.column_stack([b1, b2])
    J[2, 2] = s
    return J


class Factor:
    keys: tuple

    def linearize(self, values: Values) -> tuple[np.ndarray, list[np.ndarray]]:
        raise NotImplementedError

    def error(self, values: Values) -> float:
        r, _ = self.linearize(values)
        return float(r @ r)


@dataclass(eq=False)
class PriorFactor(Factor):
    key: Symbol
    prior: NavState
    sqrt_info: np.ndarray

    @property
    def keys(self):
        return (self.key,)

    def linearize(self, values):
        x = values[self.key]
        return self.sqrt_info @ prior_residual(x, self.prior), [self.sqrt_info @ prior_jacobian(x, self.prior)]


@dataclass(eq=False)
class ImuFactor(Factor):
    key_i: Symbol
    key_j: Symbol
    pim: PreintegratedImu
    sqrt_info: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    @property
    def keys(self):
        return (self.key_i, self.key_j)

    def linearize(self, values):
        r, Ji, Jj = imu_residual_and_jacobians(values[self.key_i], values[self.key_j], self.pim, self.gravity)
        W = self.sqrt_info
        return W @ r, [W @ Ji, W @ Jj]


@dataclass(eq=False)
class ProjectionFactor(Factor):
    key_x: Symbol
    key_l: Symbol
    measurement: Measurement
    camera: CameraModel
    sigma: float = 1.0

    @property
    def keys(self):
        return (self.key_x, self.key_l)

    def linearize(self, values):
        r, Jx, Jl = projection_residual_and_jacobians(values[self.key_x], values[self.key_l], self.measurement, self.camera)
        s = 1.0 / self.sigma
        return s * r, [s * Jx, s * Jl]


@dataclass(eq=False)
class StructurelessFactor(Factor):
    """Observations of one landmark that is kept out of the variable set."""

    landmark_id: int
    camera: CameraModel
    sigma: float = 1.0
    state_keys: list = field(default_factory=list)
    measurements: list = field(default_factory=list)

    @property
    def keys(self):
        return tuple(self.state_keys)

    def add(self, key: Symbol, meas: Measurement) -> None:
        self.state_keys.append(key)
        self.measurements.append(meas)

    def linearize(self, values):
        poses = [values[k] for k in self.state_keys]
        r, blocks, _, _ = structureless_linearize(poses, self.measurements, self.camera)
        s = 1.0 / self.sigma
        return s * r, [s * b for b in blocks]


@dataclass(eq=False)
class RegularityFactor(Factor):
    key_l: Symbol
    key_p: Symbol
    sigma: float = 0.05

    @property
    def keys(self):
        return (self.key_l, self.key_p)

    def linearize(self, values):
        rho = values[self.key_l]
        plane = values[self.key_p]
        b1, b2 = s2_basis(plane.normal)
        s = 1.0 / self.sigma
        r = np.array([plane.normal @ rho - plane.distance]) * s
        Jl = plane.normal[None] * s
        Jp = np.array([[b1 @ rho, b2 @ rho, -1.0]]) * s
        return r, [Jl, Jp]


@dataclass(eq=False)
class LinearizedPrior(Factor):
    """Dense Gaussian ``||A local(x0, x) + b||^2`` left by marginalization."""

    keys: tuple
    linearization_point: list
    A: np.ndarray
    b: np.ndarray

    def linearize(self, values):
        deltas = []
        jacs = []
        for sym, v0 in zip(self.keys, self.linearization_point):
            v = values[sym]
            deltas.append(local(sym, v0, v))
            jacs.append(local_jacobian(sym, v0, v))
        r = self.A @ np.concatenate(deltas) + self.b
        blocks = []
        col = 0
        for sym, J in zip(self.keys, jacs):
            d = DIMS[sym.kind]
            blocks.append(self.A[:, col : col + d] @ J)
            col += d
        return r, blocks


@dataclass
class FactorGraph:
    factors: list = field(default_factory=list)

    def add(self, factor: Factor) -> Factor:
        self.factors.append(factor)
        return factor

    def __iter__(self):
        return iter(self.factors)

    def __len__(self) -> int:
        return len(self.factors)

    def keys(self) -> set:
        return {k for f in self.factors for k in f.keys}

    def error(self, values: Values) -> float:
        total = 0.0
        for f in self.factors:
            try:
                total += f.error(values)
            except (CheiralityError, DegenerateTriangulation):
                continue
        return total

    def signature(self) -> list[tuple]:
        """Type and keys of each factor, for structural comparison of graphs."""
        return [(type(f).__name__, tuple(f.keys)) for f in self.factors]


def sqrt_information(cov: np.ndarray) -> np.ndarray:
    """Whitening matrix ``W`` with ``W^T W = cov^{-1}``."""
    Lc = np.linalg.cholesky(cov)
    return np.linalg.solve(Lc, np.eye(len(cov)))


def isotropic_sqrt_info(sigmas: Sequence[float]) -> np.ndarray:
    return np.diag(1.0 / np.asarray(sigmas, dtype=float))
