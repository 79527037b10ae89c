"""Trajectory and map error metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, so3_log
from .mesher import Mesh3D


@dataclass(frozen=True)
class Trajectory:
    timestamps: np.ndarray
    poses: tuple[Pose, ...]

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        if len(t) != len(self.poses):
            raise ValueError("one timestamp per pose required")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def transformed(self, T: Pose) -> "Trajectory":
        return Trajectory(self.timestamps, tuple(T * p for p in self.poses))


@dataclass(frozen=True)
class MetricSummary:
    median: float
    rmse: float
    mean: float
    max: float
    count: int

    @staticmethod
    def of(values) -> "MetricSummary":
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            nan = float("nan")
            return MetricSummary(nan, nan, nan, nan, 0)
        return MetricSummary(
            float(np.median(v)), float(np.sqrt(np.mean(v**2))), float(np.mean(v)), float(np.max(v)), int(v.size)
        )

    def rows(self) -> list[tuple[str, float]]:
        return [("median", self.median), ("rmse", self.rmse), ("mean", self.mean), ("max", self.max), ("count", self.count)]


def associate(est: Trajectory, gt: Trajectory, max_gap: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-timestamp pairs ``(est_idx, gt_idx)`` no further apart than ``max_gap``.

    The default gap is half the median ground-truth sampling period.
    """
    if len(gt) == 0 or len(est) == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    if max_gap is None:
        max_gap = 0.5 * float(np.median(np.diff(gt.timestamps))) if len(gt) > 1 else np.inf
    j = np.searchsorted(gt.timestamps, est.timestamps)
    lo = np.clip(j - 1, 0, len(gt) - 1)
    hi = np.clip(j, 0, len(gt) - 1)
    pick = np.where(np.abs(gt.timestamps[lo] - est.timestamps) <= np.abs(gt.timestamps[hi] - est.timestamps), lo, hi)
    ok = np.abs(gt.timestamps[pick] - est.timestamps) <= max_gap + 1e-12
    return np.flatnonzero(ok), pick[ok]


def umeyama_se3(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Rigid ``T`` minimizing ``sum ||T src_i - dst_i||^2`` (no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return Pose(R, mu_d - R @ mu_s)


def align_se3(est: Trajectory, gt: Trajectory, max_gap: float | None = None) -> Pose:
    ie, ig = associate(est, gt, max_gap)
    if len(ie) < 3:
        raise ValueError(f"alignment needs at least 3 associated poses, got {len(ie)}")
    return umeyama_se3(est.positions[ie], gt.positions[ig])


def ate_errors(est: Trajectory, gt: Trajectory, max_gap: float | None = None) -> np.ndarray:
    T = align_se3(est, gt, max_gap)
    ie, ig = associate(est, gt, max_gap)
    aligned = est.positions[ie] @ T.rotation.T + T.translation
    return np.linalg.norm(aligned - gt.positions[ig], axis=1)


def ate(est: Trajectory, gt: Trajectory, max_gap: float | None = None) -> MetricSummary:
    """Translational absolute error after rigid alignment."""
    return MetricSummary.of(ate_errors(est, gt, max_gap))


@dataclass(frozen=True)
class RpeResult:
    length: float
    translation: MetricSummary
    rotation_deg: MetricSummary


def rpe(est: Trajectory, gt: Trajectory, lengths: Sequence[float] = (1.0, 2.0, 4.0, 8.0), max_gap: float | None = None) -> list[RpeResult]:
    """Relative pose error over ground-truth path segments of each length."""
    ie, ig = associate(est, gt, max_gap)
    E = [est.poses[i] for i in ie]
    G = [gt.poses[i] for i in ig]
    gp = np.array([g.translation for g in G]).reshape(-1, 3)
    path = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(gp, axis=0), axis=1))])
    out = []
    for length in lengths:
        te, re = [], []
        for i in range(len(G)):
            j = int(np.searchsorted(path, path[i] + length - 1e-12))
            if j >= len(G):
                break
            d_gt = G[i].inverse() * G[j]
            d_est = E[i].inverse() * E[j]
            err = d_gt.inverse() * d_est
            te.append(np.linalg.norm(err.translation))
            re.append(np.degrees(np.linalg.norm(so3_log(err.rotation))))
        out.append(RpeResult(float(length), MetricSummary.of(te), MetricSummary.of(re)))
    return out


def sample_mesh(mesh: Mesh3D, density: float, seed: int = 0) -> np.ndarray:
    """Area-stratified uniform samples: ``floor(area*density)`` per face plus one
    more with probability equal to the remainder."""
    corners = mesh.face_corners()
    if len(corners) == 0:
        return np.empty((0, 3))
    rng = np.random.default_rng(seed)
    a = corners[:, 1] - corners[:, 0]
    b = corners[:, 2] - corners[:, 0]
    area = 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
    expected = area * density
    counts = np.floor(expected).astype(np.int64)
    counts += rng.random(len(counts)) < (expected - counts)
    face = np.repeat(np.arange(len(corners)), counts)
    r1 = np.sqrt(rng.random(len(face)))
    r2 = rng.random(len(face))
    w0, w1, w2 = 1.0 - r1, r1 * (1.0 - r2), r1 * r2
    c = corners[face]
    return w0[:, None] * c[:, 0] + w1[:, None] * c[:, 1] + w2[:, None] * c[:, 2]


def mesh_accuracy(mesh: Mesh3D, gt_cloud: np.ndarray, density: float = 1000.0, seed: int = 0) -> tuple[np.ndarray, MetricSummary]:
    """Distances from mesh samples to their nearest ground-truth point."""
    if len(mesh.faces) == 0:
        raise ValueError("mesh has no faces")
    gt_cloud = np.asarray(gt_cloud, dtype=float).reshape(-1, 3)
    if len(gt_cloud) == 0:
        raise ValueError("ground-truth cloud is empty")
    samples = sample_mesh(mesh, density, seed)
    dist, _ = cKDTree(gt_cloud).query(samples)
    return dist, MetricSummary.of(dist)


# --- CSV ---------------------------------------------------------------------


def _fmt(x) -> str:
    return str(x) if isinstance(x, (int, np.integer)) else f"{float(x):.9g}"


def write_summary_csv(summary: MetricSummary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "value"])
        for k, v in summary.rows():
            w.writerow([k, _fmt(v)])


def write_rpe_csv(result: RpeResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "translation_m", "rotation_deg"])
        for (k, t), (_, r) in zip(result.translation.rows(), result.rotation_deg.rows()):
            w.writerow([k, _fmt(t), _fmt(r)])


def write_distances_csv(dist: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distance_m"])
        for d in dist:
            w.writerow([_fmt(d)])


@dataclass(frozen=True)
class KeyframeTiming:
    keyframe: int
    t_opt_ms: float
    t_mesh_ms: float


def write_timing_csv(rows: Sequence[KeyframeTiming], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["keyframe", "t_opt_ms", "t_mesh_ms"])
        for r in rows:
            w.writerow([r.keyframe, f"{r.t_opt_ms:.4f}", f"{r.t_mesh_ms:.4f}"])


def read_summary_csv(path: str | Path) -> dict[str, float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {k: float(v) for k, v in rows[1:]}
