"""Fixed-lag smoothing over keyframe states, promoted landmarks and planes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .factors import (
    CameraModel,
    CheiralityError,
    DegenerateTriangulation,
    Measurement,
    NavState,
    NoiseParams,
    PreintegratedImu,
    imu_covariance,
    imu_propagate,
    observation_rays,
    triangulate,
    triangulate_rays_batch,
)
from .geometry import Plane
from .graph import (
    DIMS,
    LANDMARK,
    PLANE,
    STATE,
    FactorGraph,
    ImuFactor,
    L,
    LinearizedPrior,
    P,
    PriorFactor,
    ProjectionFactor,
    RegularityFactor,
    StructurelessFactor,
    Symbol,
    Values,
    X,
    isotropic_sqrt_info,
    sqrt_information,
)
from .regularity import PlaneCandidate, associate_landmarks, match_existing
from .solver import SolverConfig, SolverStats, optimize

_KIND_ORDER = {STATE: 0, PLANE: 1, LANDMARK: 2}


def symbol_order(s: Symbol) -> tuple:
    return (_KIND_ORDER[s.kind], s.index)


@dataclass(frozen=True)
class HorizonPolicy:
    lag_keyframes: int = 20
    max_planes: int = 5

    def __post_init__(self):
        if self.lag_keyframes < 1:
            raise ValueError("lag must be at least one keyframe")
        if self.max_planes < 0:
            raise ValueError("max_planes must be non-negative")


# --- marginalization --------------------------------------------------------


def marginalize(graph: FactorGraph, values: Values, exiting: Iterable[Symbol]) -> tuple[FactorGraph, Values]:
    """Remove ``exiting`` and summarize their factors as a dense Gaussian prior.

    The Schur complement of the exiting block is taken at the current
    linearization point and factored as ``||A delta + b||^2`` over the Markov
    blanket.
    """
    exiting = set(exiting)
    if not exiting:
        return FactorGraph(list(graph.factors)), dict(values)
    unknown = exiting - set(values)
    if unknown:
        raise KeyError(f"cannot marginalize unknown symbols {sorted(unknown, key=symbol_order)}")
    remaining_states = [s.index for s in values if s.kind == STATE and s not in exiting]
    exiting_states = [s.index for s in exiting if s.kind == STATE]
    if remaining_states and exiting_states and max(exiting_states) > min(remaining_states):
        raise ValueError("states must leave the horizon oldest first")

    touched, kept = [], []
    for f in graph:
        (touched if exiting.intersection(f.keys) else kept).append(f)
    blanket = sorted({k for f in touched for k in f.keys} - exiting, key=symbol_order)
    order = sorted(exiting, key=symbol_order) + blanket
    offset = {}
    n = 0
    for s in order:
        offset[s] = n
        n += DIMS[s.kind]
    H = np.zeros((n, n))
    g = np.zeros(n)
    for f in touched:
        try:
            r, blocks = f.linearize(values)
        except (CheiralityError, DegenerateTriangulation):
            continue
        if r.size == 0:
            continue
        spans = [(offset[k], J) for k, J in zip(f.keys, blocks)]
        for oa, Ja in spans:
            g[oa : oa + Ja.shape[1]] += Ja.T @ r
            for ob, Jb in spans:
                H[oa : oa + Ja.shape[1], ob : ob + Jb.shape[1]] += Ja.T @ Jb

    new_graph = FactorGraph(kept)
    new_values = {k: v for k, v in values.items() if k not in exiting}
    m = sum(DIMS[s.kind] for s in exiting)
    if not blanket:
        return new_graph, new_values
    Hmm, Hmb, Hbb = H[:m, :m], H[:m, m:], H[m:, m:]
    gm, gb = g[:m], g[m:]
    try:
        c = scipy.linalg.cho_factor(Hmm, lower=True, check_finite=False)
        X_ = scipy.linalg.cho_solve(c, np.column_stack([Hmb, gm]), check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        X_ = np.linalg.pinv(Hmm, rcond=1e-12, hermitian=True) @ np.column_stack([Hmb, gm])
    Hs = Hbb - Hmb.T @ X_[:, :-1]
    gs = gb - Hmb.T @ X_[:, -1]
    Hs = 0.5 * (Hs + Hs.T)
    lam, U = np.linalg.eigh(Hs)
    if lam[-1] <= 0:
        return new_graph, new_values
    keep = lam > 1e-12 * lam[-1]
    lam, U = lam[keep], U[:, keep]
    A = np.sqrt(lam)[:, None] * U.T
    b = (U.T @ gs) / np.sqrt(lam)
    new_graph.add(LinearizedPrior(tuple(blanket), [values[k] for k in blanket], A, b))
    return new_graph, new_values


# --- plane gating -----------------------------------------------------------


@dataclass(frozen=True)
class SpawnResult:
    accepted: bool
    plane: Plane | None = None
    landmarks: tuple = ()
    reason: str = ""


def fit_plane(points: np.ndarray) -> Plane:
    """Total least-squares plane through ``points`` in canonical form."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c)
    n = vt[-1]
    return Plane(n, float(n @ c)).canonical()


def spawn_plane(
    candidate: PlaneCandidate,
    values: Values,
    policy: HorizonPolicy = HorizonPolicy(),
    min_landmarks: int = 3,
    min_spread: float = 1e-4,
    landmark_ids: Iterable[int] | None = None,
) -> SpawnResult:
    """Decide whether ``candidate`` may become a plane variable.

    Needs enough landmark variables, a two-dimensional spread of those
    landmarks within the plane, and room under the plane cap. The plane is
    fitted to ``landmark_ids`` when given, else to every associated landmark.
    """
    if sum(1 for s in values if s.kind == PLANE) >= policy.max_planes:
        return SpawnResult(False, reason="plane cap reached")
    pool = associate_landmarks(candidate) if landmark_ids is None else landmark_ids
    ids = tuple(i for i in sorted(pool) if L(i) in values)
    if len(ids) < min_landmarks:
        return SpawnResult(False, reason="too few landmark variables")
    pts = np.array([values[L(i)] for i in ids])
    plane = fit_plane(pts)
    if float(plane.normal @ candidate.plane.normal) < 0.0:
        plane = Plane(-plane.normal, -plane.distance).canonical()
    inplane = pts - np.outer(pts @ plane.normal - plane.distance, plane.normal)
    centered = inplane - inplane.mean(axis=0)
    eig = np.linalg.eigvalsh(centered.T @ centered / len(pts))
    if eig[-2] <= min_spread:
        return SpawnResult(False, reason="degenerate landmark support")
    return SpawnResult(True, plane, ids, "accepted")


# --- stateful smoother -------------------------------------------------------


@dataclass
class KeyframeData:
    index: int
    timestamp: float
    measurements: Sequence[Measurement] = ()
    pim: PreintegratedImu | None = None
    prior: NavState | None = None


@dataclass
class FixedLagSmoother:
    """Single-owner fixed-lag estimator; see :meth:`add_keyframe`."""

    camera: CameraModel
    noise: NoiseParams = field(default_factory=NoiseParams)
    policy: HorizonPolicy = field(default_factory=HorizonPolicy)
    solver: SolverConfig = field(default_factory=SolverConfig)
    normal_tol: float = np.radians(10.0)
    distance_tol: float = 0.10

    def __post_init__(self):
        self.graph = FactorGraph()
        self.values: Values = {}
        self.states: list[Symbol] = []
        self.timestamps: dict[int, float] = {}
        self.live: dict[int, StructurelessFactor] = {}
        self.reg_pairs: set[tuple[int, int]] = set()
        self.next_plane = 0
        self.exited: dict[int, NavState] = {}
        self.last_stats: SolverStats | None = None

    # -- building ---------------------------------------------------------------

    def add_keyframe(self, kf: KeyframeData) -> Symbol:
        key = X(kf.index)
        if key in self.values:
            raise ValueError(f"keyframe {kf.index} already in the horizon")
        if not self.states:
            if kf.prior is None:
                raise ValueError("first keyframe needs a prior state")
            self.values[key] = kf.prior
            self.graph.add(PriorFactor(key, kf.prior, isotropic_sqrt_info(self.noise.prior_sigmas())))
        else:
            if kf.pim is None:
                raise ValueError(f"keyframe {kf.index} has no IMU interval from its predecessor")
            prev = self.states[-1]
            self.values[key] = imu_propagate(self.values[prev], kf.pim)
            cov = imu_covariance(kf.pim, self.noise.gyro_random_walk, self.noise.accel_random_walk)
            self.graph.add(ImuFactor(prev, key, kf.pim, sqrt_information(cov)))
        self.states.append(key)
        self.timestamps[kf.index] = kf.timestamp
        sigma = self.noise.pixel_sigma
        for m in sorted(kf.measurements, key=lambda m: m.landmark):
            lk = L(m.landmark)
            if lk in self.values:
                self.graph.add(ProjectionFactor(key, lk, m, self.camera, sigma))
                continue
            sf = self.live.get(m.landmark)
            if sf is None:
                sf = self.graph.add(StructurelessFactor(m.landmark, self.camera, sigma))
                self.live[m.landmark] = sf
            sf.add(key, m)
        return key

    def promote(self, landmark_ids: Iterable[int]) -> list[int]:
        """Turn structureless landmarks into variables, retroactively."""
        done = []
        for lid in sorted(landmark_ids):
            if L(lid) in self.values:
                continue
            sf = self.live.get(lid)
            if sf is None:
                continue
            try:
                pos = triangulate([self.values[k] for k in sf.state_keys], sf.measurements, self.camera)
            except DegenerateTriangulation:
                continue
            self.graph.factors.remove(sf)
            del self.live[lid]
            self.values[L(lid)] = pos
            for k, m in zip(sf.state_keys, sf.measurements):
                self.graph.add(ProjectionFactor(k, L(lid), m, self.camera, sf.sigma))
            done.append(lid)
        return done

    def planes(self) -> list[Symbol]:
        return sorted((s for s in self.values if s.kind == PLANE), key=symbol_order)

    def apply_candidates(self, candidates: Sequence[PlaneCandidate], regularity: bool) -> dict:
        """Promote associated landmarks and, if ``regularity``, constrain them to planes."""
        report = {"promoted": 0, "spawned": 0, "matched": 0, "rejected": 0, "factors": 0, "gated": 0}
        for cand in candidates:
            ids = associate_landmarks(cand)
            report["promoted"] += len(self.promote(ids))
            if not regularity:
                continue
            psyms = self.planes()
            matched, _ = match_existing([cand], [self.values[p] for p in psyms], self.normal_tol, self.distance_tol)
            # faces straddling a corner drag in landmarks from the neighbouring
            # surface; only those near the plane get a co-planarity factor
            ref = self.values[psyms[matched[0][1]]] if matched else cand.plane
            ids = {i for i in ids if L(i) in self.values and abs(ref.signed_distance(self.values[L(i)])) <= self.distance_tol}
            report["gated"] += len(associate_landmarks(cand)) - len(ids)
            if matched:
                psym = psyms[matched[0][1]]
                report["matched"] += 1
            else:
                res = spawn_plane(cand, self.values, self.policy, landmark_ids=ids)
                if not res.accepted:
                    report["rejected"] += 1
                    continue
                psym = P(self.next_plane)
                self.next_plane += 1
                self.values[psym] = res.plane
                report["spawned"] += 1
            for lid in sorted(ids):
                if L(lid) in self.values and (lid, psym.index) not in self.reg_pairs:
                    self.graph.add(RegularityFactor(L(lid), psym, self.noise.regularity_sigma))
                    self.reg_pairs.add((lid, psym.index))
                    report["factors"] += 1
        return report

    # -- solving ----------------------------------------------------------------

    def optimize(self) -> SolverStats:
        self.values, self.last_stats = optimize(self.graph, self.values, self.solver)
        return self.last_stats

    def marginalize_old(self) -> set[Symbol]:
        """Drop states beyond the lag plus landmarks and planes left without support."""
        n_exit = len(self.states) - self.policy.lag_keyframes
        if n_exit <= 0:
            return set()
        exiting_states = set(self.states[:n_exit])
        self.states = self.states[n_exit:]
        supported = {f.key_l for f in self.graph if isinstance(f, ProjectionFactor) and f.key_x not in exiting_states}
        exit_l = {s for s in self.values if s.kind == LANDMARK and s not in supported}
        anchored = {f.key_p for f in self.graph if isinstance(f, RegularityFactor) and f.key_l not in exit_l}
        exit_p = {s for s in self.values if s.kind == PLANE and s not in anchored}
        for s in exiting_states:
            self.exited[s.index] = self.values[s]
        exiting = exiting_states | exit_l | exit_p
        self.graph, self.values = marginalize(self.graph, self.values, exiting)
        self.live = {lid: sf for lid, sf in self.live.items() if exiting_states.isdisjoint(sf.state_keys)}
        gone_l = {s.index for s in exit_l}
        gone_p = {s.index for s in exit_p}
        self.reg_pairs = {(l_, p_) for l_, p_ in self.reg_pairs if l_ not in gone_l and p_ not in gone_p}
        return exiting

    # -- queries ----------------------------------------------------------------

    def landmark_estimates(self) -> dict[int, np.ndarray]:
        """Current position of every landmark with information in the horizon."""
        est = {s.index: v for s, v in self.values.items() if s.kind == LANDMARK}
        lids = sorted(self.live)
        if lids:
            keys = [k for lid in lids for k in self.live[lid].state_keys]
            group = np.concatenate([np.full(len(self.live[lid].state_keys), g) for g, lid in enumerate(lids)])
            R = np.array([self.values[k].rotation for k in keys])
            p = np.array([self.values[k].position for k in keys])
            pix = np.array([m.pixel for lid in lids for m in self.live[lid].measurements])
            centers, rays = observation_rays(R, p, pix, self.camera)
            reps = len(centers) // len(keys)
            pts, ok = triangulate_rays_batch(centers, rays, np.tile(group, reps), len(lids))
            for g, lid in enumerate(lids):
                if ok[g]:
                    est[lid] = pts[g]
        return dict(sorted(est.items()))

    def trajectory(self) -> list[tuple[int, float, NavState]]:
        """Exit-time estimates for marginalized states, current ones for the rest."""
        out = dict(self.exited)
        for s in self.states:
            out[s.index] = self.values[s]
        return [(i, self.timestamps[i], out[i]) for i in sorted(out)]
