"""End-to-end run: simulate, mesh, detect, smooth, evaluate, write outputs."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .evaluation import (
    KeyframeTiming,
    MetricSummary,
    RpeResult,
    Trajectory,
    ate,
    mesh_accuracy,
    rpe,
    write_distances_csv,
    write_rpe_csv,
    write_summary_csv,
    write_timing_csv,
)
from .delaunay import delaunay
from .factors import NavState, NoiseParams, imu_preintegrate
from .geometry import Pose
from .mesher import FilterParams, Mesh3D, filter_faces, lift_to_3d, triangulate_2d, update_mesh, write_mesh_ply, write_point_cloud_ply
from .regularity import DetectorParams, detect_planes
from .sim import SimConfig, build_scene, default_camera, keyframe_samples, simulate_imu, simulate_tracks, simulate_trajectory
from .smoother import FixedLagSmoother, HorizonPolicy, KeyframeData
from .solver import SolverConfig

PIPELINES = ("s", "sp", "spr")


@dataclass(frozen=True)
class OutputOptions:
    timing: bool = False
    gt_cloud_spacing: float = 0.02
    mesh_density: float = 1000.0
    mesh_seed: int = 0
    rpe_lengths: str = "1,2,4,8"

    def lengths(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.rpe_lengths.split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    pipeline: str = "spr"
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    mesh: FilterParams = field(default_factory=FilterParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    smoother: HorizonPolicy = field(default_factory=HorizonPolicy)
    solver: SolverConfig = field(default_factory=SolverConfig)
    noise: NoiseParams = field(default_factory=NoiseParams)
    output: OutputOptions = field(default_factory=OutputOptions)

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if self.sim.seed != self.seed:
            object.__setattr__(self, "sim", dataclasses.replace(self.sim, seed=self.seed))

    # flat key=value view ------------------------------------------------------

    _SECTIONS = ("sim", "mesh", "detector", "smoother", "solver", "noise", "output")

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {"pipeline": self.pipeline, "seed": self.seed}
        for sec in self._SECTIONS:
            for f in dataclasses.fields(getattr(self, sec)):
                if sec == "sim" and f.name == "seed":
                    continue
                flat[f"{sec}.{f.name}"] = getattr(getattr(self, sec), f.name)
        return flat

    @classmethod
    def from_flat(cls, flat: Mapping[str, str]) -> "RunConfig":
        base = cls()
        known = base.to_flat()
        unknown = sorted(set(flat) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        typed = {k: _coerce(k, v, known[k]) for k, v in flat.items()}
        sections = {}
        for sec in cls._SECTIONS:
            upd = {k.split(".", 1)[1]: v for k, v in typed.items() if k.startswith(sec + ".")}
            sections[sec] = dataclasses.replace(getattr(base, sec), **upd)
        return cls(
            pipeline=str(typed.get("pipeline", base.pipeline)).lower(),
            seed=int(typed.get("seed", base.seed)),
            **sections,
        )


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if isinstance(default, bool):
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
    except ValueError:
        raise ValueError(f"bad value for {key}: {raw!r}") from None
    return s


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={_fmt_value(v)}\n" for k, v in cfg.to_flat().items())


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- run ----------------------------------------------------------------------


@dataclass
class RunResult:
    config: RunConfig
    estimate: Trajectory
    ground_truth: Trajectory
    mesh: Mesh3D
    gt_cloud: np.ndarray
    timing: list[KeyframeTiming]
    regularity_residuals: np.ndarray
    n_planes_spawned: int
    smoother: FixedLagSmoother

    def ate(self) -> MetricSummary:
        return ate(self.estimate, self.ground_truth)

    def rpe(self) -> list[RpeResult]:
        return rpe(self.estimate, self.ground_truth, self.config.output.lengths())

    def mesh_accuracy(self):
        return mesh_accuracy(self.mesh, self.gt_cloud, self.config.output.mesh_density, self.config.output.mesh_seed)


def execute(cfg: RunConfig) -> RunResult:
    """Run the per-keyframe loop in memory."""
    sc = cfg.sim
    world = build_scene(sc)
    traj = simulate_trajectory(sc)
    kfs = keyframe_samples(traj, sc)
    samples, _, _ = simulate_imu(traj, sc)
    camera = default_camera()
    tracks = simulate_tracks(world, kfs, camera, sc)
    spk = sc.samples_per_keyframe
    sm = FixedLagSmoother(
        camera,
        cfg.noise,
        cfg.smoother,
        cfg.solver,
        np.radians(cfg.detector.match_normal_tol_deg),
        cfg.detector.match_distance_tol,
    )
    mesh = Mesh3D()
    # compile the triangulator up front so keyframe timings are steady-state
    delaunay(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    timing = []
    spawned = 0
    for k, kf in enumerate(kfs):
        if k == 0:
            s0 = kf
            data = KeyframeData(k, kf.time, tracks[k].measurements, prior=NavState(s0.pose.rotation, s0.pose.translation, s0.velocity.copy()))
        else:
            prev = sm.values[sm.states[-1]]
            pim = imu_preintegrate(
                samples[(k - 1) * spk : k * spk], prev.bias_gyro, prev.bias_accel,
                cfg.noise.gyro_noise_density, cfg.noise.accel_noise_density,
            )
            data = KeyframeData(k, kf.time, tracks[k].measurements, pim=pim)
        sm.add_keyframe(data)

        t0 = time.perf_counter()
        est = sm.landmark_estimates()
        local = filter_faces(lift_to_3d(triangulate_2d(tracks[k].keypoints), est), cfg.mesh)
        mesh = update_mesh(mesh, local, set(mesh.vertices) - set(est), est)
        t_mesh = time.perf_counter() - t0

        if cfg.pipeline != "s":
            cands = detect_planes(mesh, cfg.detector)
            spawned += sm.apply_candidates(cands, regularity=cfg.pipeline == "spr")["spawned"]

        t0 = time.perf_counter()
        sm.optimize()
        t_opt = time.perf_counter() - t0

        sm.marginalize_old()
        est = sm.landmark_estimates()
        mesh = update_mesh(mesh, Mesh3D(), set(mesh.vertices) - set(est), est)
        timing.append(KeyframeTiming(k, 1e3 * t_opt, 1e3 * t_mesh))

    records = sm.trajectory()
    estimate = Trajectory(np.array([t for _, t, _ in records]), tuple(x.pose for _, _, x in records))
    gt = Trajectory(np.array([s.time for s in kfs]), tuple(s.pose for s in kfs))
    return RunResult(
        cfg, estimate, gt, mesh, world.ground_truth_cloud(cfg.output.gt_cloud_spacing), timing,
        regularity_residuals(sm), spawned, sm,
    )


def regularity_residuals(sm: FixedLagSmoother) -> np.ndarray:
    """Unwhitened point-to-plane distances of every active co-planarity factor."""
    from .graph import RegularityFactor

    out = [
        sm.values[f.key_p].signed_distance(sm.values[f.key_l])
        for f in sm.graph
        if isinstance(f, RegularityFactor)
    ]
    return np.asarray(out, dtype=float)


# --- outputs ------------------------------------------------------------------


def _quat_xyzw(R: np.ndarray) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    q = Rotation.from_matrix(R).as_quat()
    return q if q[3] >= 0 else -q


def write_trajectory(traj: Trajectory, path: str | Path) -> None:
    lines = []
    for t, p in zip(traj.timestamps, traj.poses):
        vals = [t, *p.translation, *_quat_xyzw(p.rotation)]
        lines.append(" ".join(f"{v:.9g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path: str | Path) -> Trajectory:
    from scipy.spatial.transform import Rotation

    rows = np.loadtxt(path, ndmin=2)
    poses = tuple(Pose(Rotation.from_quat(r[4:8]).as_matrix(), r[1:4].copy()) for r in rows)
    return Trajectory(rows[:, 0], poses)


def write_outputs(result: RunResult, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    write_trajectory(result.estimate, out / "traj_est.txt")
    write_trajectory(result.ground_truth, out / "traj_gt.txt")
    write_mesh_ply(result.mesh, out / "mesh.ply")
    write_point_cloud_ply(result.gt_cloud, out / "gt_cloud.ply")
    write_summary_csv(result.ate(), out / "ate.csv")
    for r in result.rpe():
        write_rpe_csv(r, out / f"rpe_{r.length:g}.csv")
    if result.mesh.faces:
        dist, _ = result.mesh_accuracy()
        write_distances_csv(dist, out / "mesh_accuracy.csv")
    if cfg.output.timing:
        write_timing_csv(result.timing, out / "timing.csv")
    (out / "manifest.txt").write_text(format_config(cfg))
    return out


def run_pipeline(cfg: RunConfig, out: str | Path) -> RunResult:
    result = execute(cfg)
    write_outputs(result, out)
    return result
