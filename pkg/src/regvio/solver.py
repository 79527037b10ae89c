"""Levenberg-Marquardt on the factor graph with Schur elimination of landmarks.

Variables split into a *dense* block (states, planes, and landmarks tied into
a marginal prior) and an *eliminated* block of 3-dof landmark blocks that is
block diagonal in the normal equations. Structureless factors enter as
temporary, undamped landmark blocks that are eliminated and then discarded,
which is exactly their null-space projected form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .factors import (
    CheiralityError,
    DegenerateTriangulation,
    imu_residual_batch,
    observation_rays,
    stack_preintegrated,
    stereo_residual_batch,
    triangulate_rays_batch,
)
from .graph import (
    DIMS,
    LANDMARK,
    PLANE,
    STATE,
    Factor,
    FactorGraph,
    ImuFactor,
    LinearizedPrior,
    ProjectionFactor,
    RegularityFactor,
    StructurelessFactor,
    Symbol,
    Values,
    retract,
)
from .geometry import s2_basis


class SolverError(RuntimeError):
    """Normal equations stayed singular under maximal damping."""


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 15
    relative_tolerance: float = 1e-6
    step_tolerance: float = 1e-8
    initial_lambda: float = 1e-4
    lambda_factor: float = 10.0
    max_lambda: float = 1e10


@dataclass
class SolverStats:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    costs: list = field(default_factory=list)
    converged: bool = False
    lam: float = 0.0


def _scatter(M: np.ndarray, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> None:
    flat = (rows * M.shape[1] + cols).ravel()
    M += np.bincount(flat, weights=vals.ravel(), minlength=M.size).reshape(M.shape)


def _scatter_vec(v: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    v += np.bincount(idx.ravel(), weights=vals.ravel(), minlength=len(v))


def _tmm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.matmul(np.swapaxes(A, 1, 2), B)


def _tmv(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.matmul(np.swapaxes(A, 1, 2), v[:, :, None])[:, :, 0]


def _block_index(offsets: np.ndarray, dim: int) -> np.ndarray:
    return offsets[:, None] + np.arange(dim)[None, :]


class _Problem:
    """Compiled layout and vectorized batches for one graph/values pair."""

    def __init__(self, graph: FactorGraph, values: Values):
        dense_landmarks = set()
        for f in graph:
            if isinstance(f, (ProjectionFactor, RegularityFactor, StructurelessFactor)):
                continue
            lms = [k for k in f.keys if k.kind == LANDMARK]
            if isinstance(f, LinearizedPrior) or len(lms) > 1:
                dense_landmarks.update(lms)
        syms = sorted(values, key=lambda s: (s.kind != STATE, s.kind != PLANE, s.index))
        self.dense: list[Symbol] = [s for s in syms if s.kind != LANDMARK or s in dense_landmarks]
        self.elim: list[Symbol] = [s for s in syms if s.kind == LANDMARK and s not in dense_landmarks]
        self.offset: dict[Symbol, int] = {}
        o = 0
        for s in self.dense:
            self.offset[s] = o
            o += DIMS[s.kind]
        self.nD = o
        self.eindex = {s: i for i, s in enumerate(self.elim)}
        self.states = [s for s in self.dense if s.kind == STATE]
        self.state_pos = {s: i for i, s in enumerate(self.states)}

        proj, regs, sls, generic = [], [], [], []
        cams = set()
        for f in graph:
            if isinstance(f, ProjectionFactor) and f.measurement.is_stereo:
                proj.append(f)
                cams.add(id(f.camera))
            elif isinstance(f, RegularityFactor):
                regs.append(f)
            elif isinstance(f, StructurelessFactor) and f.measurements and f.measurements[0].is_stereo:
                if len(f.measurements) >= 2:
                    sls.append(f)
                    cams.add(id(f.camera))
            else:
                generic.append(f)
        if len(cams) > 1:
            # mixed cameras: fall back to per-factor linearization
            generic += proj + sls
            proj, sls = [], []
        imus = [f for f in generic if isinstance(f, ImuFactor)]
        if imus and all(np.array_equal(f.gravity, imus[0].gravity) for f in imus):
            generic = [f for f in generic if not isinstance(f, ImuFactor)]
        else:
            imus = []
        self.n_imu = len(imus)
        if imus:
            self.i_i = np.array([self.state_pos[f.key_i] for f in imus])
            self.i_j = np.array([self.state_pos[f.key_j] for f in imus])
            self.i_P = stack_preintegrated([f.pim for f in imus])
            self.i_W = np.array([f.sqrt_info for f in imus])
            self.i_g = imus[0].gravity
        self.generic = generic
        self.camera = (proj or sls)[0].camera if (proj or sls) else None

        # stereo projection batch
        self.n_proj = len(proj)
        if proj:
            self.p_state = np.array([self.state_pos[f.key_x] for f in proj])
            self.p_lsym = [f.key_l for f in proj]
            self.p_meas = np.array([f.measurement.pixel for f in proj])
            self.p_w = np.array([1.0 / f.sigma for f in proj])
            self.p_elim = np.array([k in self.eindex for k in self.p_lsym])
            self.p_eidx = np.array([self.eindex.get(k, 0) for k in self.p_lsym])
            self.p_doff = np.array([self.offset.get(k, 0) for k in self.p_lsym])

        # structureless batch: observations flattened, one temporary block per factor
        self.n_sl = len(sls)
        if sls:
            self.s_state = np.array([self.state_pos[k] for f in sls for k in f.state_keys])
            self.s_group = np.concatenate([np.full(len(f.state_keys), g) for g, f in enumerate(sls)])
            self.s_meas = np.array([m.pixel for f in sls for m in f.measurements])
            self.s_w = np.concatenate([np.full(len(f.state_keys), 1.0 / f.sigma) for f in sls])

        # regularity batch
        self.n_reg = len(regs)
        if regs:
            self.r_lsym = [f.key_l for f in regs]
            self.r_psym = [f.key_p for f in regs]
            self.r_w = np.array([1.0 / f.sigma for f in regs])
            self.r_elim = np.array([k in self.eindex for k in self.r_lsym])
            self.r_eidx = np.array([self.eindex.get(k, 0) for k in self.r_lsym])
            self.r_doff = np.array([self.offset.get(k, 0) for k in self.r_lsym])
            self.r_poff = np.array([self.offset[k] for k in self.r_psym])

        self.nE = len(self.elim) + self.n_sl
        self.state_off = np.array([self.offset[s] for s in self.states], dtype=np.int64)

    # -- evaluation --------------------------------------------------------

    def _state_arrays(self, values):
        R = np.array([values[s].rotation for s in self.states]) if self.states else np.zeros((0, 3, 3))
        p = np.array([values[s].position for s in self.states]) if self.states else np.zeros((0, 3))
        return R, p

    def _imu(self, values, R, p, jac: bool):
        xs = [values[s] for s in self.states]
        v = np.array([x.velocity for x in xs])
        bg = np.array([x.bias_gyro for x in xs])
        ba = np.array([x.bias_accel for x in xs])

        def pick(idx):
            return {"R": R[idx], "p": p[idx], "v": v[idx], "bg": bg[idx], "ba": ba[idx]}

        r, Ji, Jj = imu_residual_batch(pick(self.i_i), pick(self.i_j), self.i_P, self.i_g, jacobians=jac)
        r = np.einsum("nij,nj->ni", self.i_W, r)
        if not jac:
            return r, None
        return r, np.concatenate([self.i_W @ Ji, self.i_W @ Jj], axis=2)

    def _landmark_array(self, values, syms):
        return np.array([values[k] for k in syms])

    def _structureless(self, values, R, p, jac: bool):
        cam = self.camera
        centers, rays = observation_rays(R[self.s_state], p[self.s_state], self.s_meas, cam)
        group2 = np.concatenate([self.s_group, self.s_group])
        pts, ok = triangulate_rays_batch(centers, rays, group2, self.n_sl)
        l = pts[self.s_group]
        r, Jx, Jl, Z = stereo_residual_batch(R[self.s_state], p[self.s_state], l, self.s_meas, cam, jacobians=True)
        bad = np.zeros(self.n_sl, dtype=bool)
        np.logical_or.at(bad, self.s_group, ~(Z > 0))
        ok &= ~bad
        w = self.s_w[:, None]
        r = r * w
        Jl = Jl * w[:, :, None]
        if jac:
            Jx = Jx * w[:, :, None]
        return r, Jx, Jl, ok

    def cost(self, values: Values) -> float:
        total = 0.0
        R, p = self._state_arrays(values)
        if self.n_proj:
            l = self._landmark_array(values, self.p_lsym)
            r, _, _, Z = stereo_residual_batch(R[self.p_state], p[self.p_state], l, self.p_meas, self.camera, jacobians=False)
            r = r * self.p_w[:, None]
            total += float(np.sum(r[Z > 0] ** 2))
        if self.n_sl:
            r, _, Jl, ok = self._structureless(values, R, p, jac=False)
            keep = ok[self.s_group]
            Hll = np.zeros((self.n_sl, 3, 3))
            b = np.zeros((self.n_sl, 3))
            np.add.at(Hll, self.s_group, _tmm(Jl, Jl))
            np.add.at(b, self.s_group, _tmv(Jl, r))
            ee = np.zeros(self.n_sl)
            np.add.at(ee, self.s_group, np.sum(r**2, axis=1))
            okg = ok & (np.abs(np.linalg.det(Hll)) > 0)
            if okg.any():
                sol = np.linalg.solve(Hll[okg], b[okg][:, :, None])[:, :, 0]
                total += float(np.sum(ee[okg] - np.einsum("ni,ni->n", b[okg], sol)))
            del keep
        if self.n_reg:
            l = self._landmark_array(values, self.r_lsym)
            n = np.array([values[k].normal for k in self.r_psym])
            d = np.array([values[k].distance for k in self.r_psym])
            r = (np.einsum("ni,ni->n", n, l) - d) * self.r_w
            total += float(r @ r)
        if self.n_imu:
            r, _ = self._imu(values, R, p, jac=False)
            total += float(np.sum(r * r))
        for f in self.generic:
            try:
                total += f.error(values)
            except (CheiralityError, DegenerateTriangulation):
                continue
        return total

    # -- linearization -------------------------------------------------------

    def linearize(self, values: Values):
        nD, nE = self.nD, self.nE
        H = np.zeros((nD, nD))
        g = np.zeros(nD)
        HDE = np.zeros((nD, 3 * nE))
        HEE = np.zeros((nE, 3, 3))
        gE = np.zeros((nE, 3))
        R, p = self._state_arrays(values)
        xrows = _block_index(self.state_off, 15)

        def add_obs(rows_x, Jx, Jl, r, elim_mask, eidx, doff):
            # state-state and state gradient
            _scatter(H, rows_x[:, :, None], rows_x[:, None, :], _tmm(Jx, Jx))
            _scatter_vec(g, rows_x, _tmv(Jx, r))
            JlJl = _tmm(Jl, Jl)
            Jlr = _tmv(Jl, r)
            JxJl = _tmm(Jx, Jl)
            m = elim_mask
            if m.any():
                np.add.at(HEE, eidx[m], JlJl[m])
                np.add.at(gE, eidx[m], Jlr[m])
                cols = _block_index(eidx[m] * 3, 3)
                _scatter(HDE, rows_x[m][:, :, None], cols[:, None, :], JxJl[m])
            m = ~elim_mask
            if m.any():
                lrows = _block_index(doff[m], 3)
                _scatter(H, lrows[:, :, None], lrows[:, None, :], JlJl[m])
                _scatter_vec(g, lrows, Jlr[m])
                _scatter(H, rows_x[m][:, :, None], lrows[:, None, :], JxJl[m])
                _scatter(H, lrows[:, :, None], rows_x[m][:, None, :], np.transpose(JxJl[m], (0, 2, 1)))

        if self.n_proj:
            l = self._landmark_array(values, self.p_lsym)
            r, Jx, Jl, Z = stereo_residual_batch(R[self.p_state], p[self.p_state], l, self.p_meas, self.camera)
            w = self.p_w * (Z > 0)
            r, Jx, Jl = r * w[:, None], Jx * w[:, None, None], Jl * w[:, None, None]
            add_obs(xrows[self.p_state], Jx, Jl, r, self.p_elim, self.p_eidx, self.p_doff)

        if self.n_sl:
            r, Jx, Jl, ok = self._structureless(values, R, p, jac=True)
            w = ok[self.s_group].astype(float)
            r, Jx, Jl = r * w[:, None], Jx * w[:, None, None], Jl * w[:, None, None]
            n = len(r)
            add_obs(xrows[self.s_state], Jx, Jl, r, np.ones(n, dtype=bool), len(self.elim) + self.s_group, np.zeros(n, dtype=np.int64))

        if self.n_reg:
            l = self._landmark_array(values, self.r_lsym)
            planes = [values[k] for k in self.r_psym]
            n = np.array([pl.normal for pl in planes])
            d = np.array([pl.distance for pl in planes])
            B = np.array([np.column_stack(s2_basis(pl.normal)) for pl in planes])
            w = self.r_w
            r = ((np.einsum("ni,ni->n", n, l) - d) * w)[:, None]
            Jp = np.concatenate([np.einsum("ni,nij->nj", l, B), -np.ones((len(l), 1))], axis=1)[:, None, :] * w[:, None, None]
            Jl = n[:, None, :] * w[:, None, None]
            prow = _block_index(self.r_poff, 3)
            add_obs(prow, Jp, Jl, r, self.r_elim, self.r_eidx, self.r_doff)

        if self.n_imu:
            r, J = self._imu(values, R, p, jac=True)
            rows = np.concatenate([xrows[self.i_i], xrows[self.i_j]], axis=1)
            _scatter(H, rows[:, :, None], rows[:, None, :], _tmm(J, J))
            _scatter_vec(g, rows, _tmv(J, r))

        for f in self.generic:
            try:
                r, blocks = f.linearize(values)
            except (CheiralityError, DegenerateTriangulation):
                continue
            if r.size == 0:
                continue
            self._add_generic(H, g, HDE, HEE, gE, f.keys, r, blocks)
        return H, g, HDE, HEE, gE

    def _add_generic(self, H, g, HDE, HEE, gE, keys, r, blocks):
        idx, dense = [], []
        elim = []
        for k, J in zip(keys, blocks):
            if k in self.offset:
                idx.append(self.offset[k] + np.arange(J.shape[1]))
                dense.append(J)
            else:
                elim.append((self.eindex[k], J))
        if len(elim) > 1:
            raise SolverError("factor couples two eliminated landmarks")
        if dense:
            idx = np.concatenate(idx)
            Jd = np.hstack(dense)
            H[np.ix_(idx, idx)] += Jd.T @ Jd
            g[idx] += Jd.T @ r
        for e, Je in elim:
            HEE[e] += Je.T @ Je
            gE[e] += Je.T @ r
            if dense:
                HDE[idx, 3 * e : 3 * e + 3] += Jd.T @ Je

    # -- step ----------------------------------------------------------------

    def solve(self, lin, lam: float):
        H, g, HDE, HEE, gE = lin
        nvar = len(self.elim)
        Hd = H + lam * np.diag(np.diag(H))
        HEEd = HEE.copy()
        if nvar:
            idx = np.arange(3)
            HEEd[:nvar, idx, idx] *= 1.0 + lam
        try:
            Minv = np.linalg.inv(HEEd) if self.nE else HEEd
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular landmark block") from exc
        if self.nD == 0:
            dD = np.zeros(0)
            dE = np.einsum("eij,ej->ei", Minv[:nvar], -gE[:nvar]) if nvar else None
            return dD, dE
        if self.nE:
            W = np.einsum("dei,eij->dej", HDE.reshape(self.nD, self.nE, 3), Minv).reshape(self.nD, -1)
            S = Hd - W @ HDE.T
            rhs = -g + W @ gE.reshape(-1)
        else:
            S, rhs = Hd, -g
        S = 0.5 * (S + S.T)
        c = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
        dD = scipy.linalg.cho_solve(c, rhs, check_finite=False)
        if not np.all(np.isfinite(dD)):
            raise np.linalg.LinAlgError("non-finite step")
        dE = None
        if nvar:
            t = -gE[:nvar] - (HDE[:, : 3 * nvar].T @ dD).reshape(nvar, 3)
            dE = np.einsum("eij,ej->ei", Minv[:nvar], t)
        return dD, dE

    def apply(self, values: Values, dD, dE) -> Values:
        out = dict(values)
        for s in self.dense:
            o = self.offset[s]
            out[s] = retract(s, values[s], dD[o : o + DIMS[s.kind]])
        if dE is not None:
            for s, d in zip(self.elim, dE):
                out[s] = values[s] + d
        return out


def optimize(graph: FactorGraph, values: Values, config: SolverConfig = SolverConfig()) -> tuple[Values, SolverStats]:
    """Minimize the total whitened squared error with on-manifold LM."""
    missing = graph.keys() - set(values)
    if missing:
        raise KeyError(f"factors reference unknown symbols: {sorted(missing)[:5]}")
    prob = _Problem(graph, values)
    cost = prob.cost(values)
    stats = SolverStats(initial_cost=cost, final_cost=cost, costs=[cost])
    if prob.nD == 0 and not prob.elim:
        stats.converged = True
        return dict(values), stats
    lam = config.initial_lambda
    for it in range(config.max_iterations):
        lin = prob.linearize(values)
        accepted = False
        solvable = False
        while lam <= config.max_lambda:
            try:
                dD, dE = prob.solve(lin, lam)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                lam *= config.lambda_factor
                continue
            solvable = True
            new_values = prob.apply(values, dD, dE)
            new_cost = prob.cost(new_values)
            if np.isfinite(new_cost) and new_cost <= cost:
                accepted = True
                break
            lam *= config.lambda_factor
        if not accepted:
            if not np.isfinite(cost):
                raise SolverError("non-finite cost")
            if not solvable:
                raise SolverError("normal equations singular under maximal damping")
            stats.converged = True
            break
        step = float(np.sqrt(dD @ dD + (0.0 if dE is None else float(np.sum(dE**2)))))
        decrease = cost - new_cost
        values, cost = new_values, new_cost
        stats.iterations = it + 1
        stats.costs.append(cost)
        lam = max(lam / config.lambda_factor, 1e-12)
        if decrease <= config.relative_tolerance * max(stats.costs[-2], 1e-300) or step < config.step_tolerance:
            stats.converged = True
            break
    stats.final_cost = cost
    stats.lam = lam
    return values, stats
