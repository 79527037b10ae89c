import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import umeyama_brute
from regvio.evaluation import (
    KeyframeTiming,
    MetricSummary,
    Trajectory,
    align_se3,
    associate,
    ate,
    mesh_accuracy,
    read_summary_csv,
    rpe,
    sample_mesh,
    write_summary_csv,
    write_timing_csv,
)
from regvio.geometry import Pose, so3_exp
from regvio.mesher import Mesh3D


def wiggly(n=60, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * 0.5
    pos = np.column_stack([np.cos(t / 3) * 2, np.sin(t / 2), 0.3 * np.sin(t)]) + rng.normal(size=(n, 3)) * 0.01
    return Trajectory(t, tuple(Pose(so3_exp(rng.normal(size=3) * 0.3), p) for p in pos))


def random_pose(rng):
    return Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3) * 3)


def test_trajectory_requires_increasing_time():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), (Pose.identity(), Pose.identity()))


def test_identity_alignment():
    tr = wiggly()
    T = align_se3(tr, tr)
    assert np.allclose(T.rotation, np.eye(3), atol=1e-12) and np.allclose(T.translation, 0, atol=1e-12)
    s = ate(tr, tr)
    assert s.max < 1e-12 and s.median < 1e-12


def test_translation_recovered():
    gt = wiggly()
    est = gt.transformed(Pose(np.eye(3), np.array([1.0, 2.0, 3.0])))
    T = align_se3(est, gt)
    assert np.allclose(T.translation, [-1, -2, -3], atol=1e-12)
    assert ate(est, gt).max < 1e-12


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_random_rigid_alignment_exact(seed):
    rng = np.random.default_rng(seed)
    gt = wiggly(seed=seed)
    est = gt.transformed(random_pose(rng))
    assert ate(est, gt).max < 1e-9


def test_umeyama_against_iterative_oracle():
    rng = np.random.default_rng(3)
    gt = wiggly(seed=3)
    noisy = Trajectory(gt.timestamps, tuple(Pose(p.rotation, p.translation + rng.normal(size=3) * 0.1) for p in gt.poses))
    est = noisy.transformed(random_pose(rng))
    T = align_se3(est, gt)
    R, t = umeyama_brute(est.positions, gt.positions)
    assert np.allclose(T.rotation, R, atol=1e-7) and np.allclose(T.translation, t, atol=1e-7)


def test_too_few_pairs():
    tr = Trajectory(np.array([0.0, 1.0]), (Pose.identity(), Pose.identity()))
    with pytest.raises(ValueError):
        align_se3(tr, tr)


def test_association_gap():
    gt = Trajectory(np.arange(10) * 0.5, tuple(Pose.identity() for _ in range(10)))
    est = Trajectory(np.array([0.1, 1.4, 2.26]), tuple(Pose.identity() for _ in range(3)))
    ie, ig = associate(est, gt)
    assert ie.tolist() == [0, 1, 2] and ig.tolist() == [0, 3, 5]
    ie, _ = associate(est, gt, max_gap=0.05)
    assert ie.tolist() == []


def test_single_outlier_sets_max():
    n = 400
    t = np.arange(n) * 0.1
    gt = Trajectory(t, tuple(Pose(np.eye(3), np.array([np.cos(k / 20), np.sin(k / 30), k / 100])) for k in range(n)))
    poses = list(gt.poses)
    poses[200] = Pose(np.eye(3), poses[200].translation + [0.2, 0, 0])
    s = ate(Trajectory(t, tuple(poses)), gt)
    assert s.max == pytest.approx(0.2, abs=2e-3)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_metrics_invariant_to_common_transform(seed):
    rng = np.random.default_rng(seed)
    gt = wiggly(seed=seed)
    est = Trajectory(gt.timestamps, tuple(Pose(p.rotation @ so3_exp(rng.normal(size=3) * 0.02), p.translation + rng.normal(size=3) * 0.05) for p in gt.poses))
    T = random_pose(rng)
    a, b = ate(est, gt), ate(est.transformed(T), gt.transformed(T))
    assert np.isclose(a.rmse, b.rmse, atol=1e-9) and np.isclose(a.median, b.median, atol=1e-9)
    for r1, r2 in zip(rpe(est, gt, (1.0, 2.0)), rpe(est.transformed(T), gt.transformed(T), (1.0, 2.0))):
        assert np.isclose(r1.translation.median, r2.translation.median, atol=1e-9)
        assert np.isclose(r1.rotation_deg.median, r2.rotation_deg.median, atol=1e-7)


def straight_line(n=200, step=0.05):
    t = np.arange(n) * 0.1
    return t, np.column_stack([np.arange(n) * step, np.zeros(n), np.zeros(n)])


def test_rpe_zero_for_identical():
    gt = wiggly()
    for r in rpe(gt, gt):
        assert r.translation.count == 0 or r.translation.max < 1e-12


def test_rpe_scale_drift():
    t, p = straight_line()
    gt = Trajectory(t, tuple(Pose(np.eye(3), x) for x in p))
    est = Trajectory(t, tuple(Pose(np.eye(3), 1.01 * x) for x in p))
    for r in rpe(est, gt, (1.0, 2.0, 4.0, 8.0)):
        assert r.translation.median == pytest.approx(0.01 * r.length, rel=1e-6)


def test_rpe_yaw_drift():
    t, p = straight_line()
    gt = Trajectory(t, tuple(Pose(np.eye(3), x) for x in p))
    s = p[:, 0]
    est = Trajectory(t, tuple(Pose(so3_exp(np.array([0, 0, np.radians(0.1 * d)])), x) for d, x in zip(s, p)))
    for r in rpe(est, gt, (1.0, 2.0, 4.0)):
        assert r.rotation_deg.median == pytest.approx(0.1 * r.length, rel=1e-6)


def test_rpe_length_beyond_path_is_empty():
    t, p = straight_line(n=20)
    gt = Trajectory(t, tuple(Pose(np.eye(3), x) for x in p))
    (r,) = rpe(gt, gt, (100.0,))
    assert r.translation.count == 0 and np.isnan(r.translation.median)


# --- mesh accuracy ------------------------------------------------------------------


def unit_square(z=0.0):
    v = {0: np.array([0, 0, z]), 1: np.array([1.0, 0, z]), 2: np.array([1.0, 1, z]), 3: np.array([0, 1.0, z])}
    return Mesh3D(v, {(0, 1, 2), (0, 2, 3)})


def gt_grid(spacing=0.01, z=0.0, lo=-0.5, hi=1.5):
    g = np.arange(lo, hi + 1e-9, spacing)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])


def test_one_square_metre_gives_about_1000_samples():
    s = sample_mesh(unit_square(), 1000.0, seed=0)
    assert abs(len(s) - 1000) <= 2


def test_samples_lie_on_faces():
    s = sample_mesh(unit_square(0.3), 500.0, seed=1)
    assert np.allclose(s[:, 2], 0.3) and s[:, :2].min() >= 0 and s[:, :2].max() <= 1


def test_coincident_mesh_distance_bounded_by_spacing():
    dist, summary = mesh_accuracy(unit_square(), gt_grid(0.02))
    assert summary.max <= 0.02 * np.sqrt(2) / 2 + 1e-12


def test_offset_mesh_median():
    _, summary = mesh_accuracy(unit_square(0.1), gt_grid(0.005))
    assert summary.median == pytest.approx(0.1, abs=0.002)


def test_mesh_accuracy_errors():
    with pytest.raises(ValueError):
        mesh_accuracy(Mesh3D(), gt_grid())
    with pytest.raises(ValueError):
        mesh_accuracy(unit_square(), np.empty((0, 3)))


def test_mesh_accuracy_deterministic_and_density_stable():
    rng = np.random.default_rng(0)
    verts = {i: np.array([x, y, 0.02 * np.sin(5 * x) + 0.01 * rng.normal()]) for i, (x, y) in enumerate([(x, y) for x in np.linspace(0, 1, 6) for y in np.linspace(0, 1, 6)])}
    faces = set()
    for i in range(5):
        for j in range(5):
            a, b, c, d = 6 * i + j, 6 * (i + 1) + j, 6 * (i + 1) + j + 1, 6 * i + j + 1
            faces |= {tuple(sorted((a, b, c))), tuple(sorted((a, c, d)))}
    mesh = Mesh3D(verts, faces)
    cloud = gt_grid(0.01)
    d1, s1 = mesh_accuracy(mesh, cloud, 1000.0, seed=3)
    d1b, _ = mesh_accuracy(mesh, cloud, 1000.0, seed=3)
    assert np.array_equal(d1, d1b)
    _, s2 = mesh_accuracy(mesh, cloud, 2000.0, seed=4)
    boot = np.median(rng.choice(d1, size=(2000, len(d1))), axis=1)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    assert lo <= s2.median <= hi


# --- CSV -----------------------------------------------------------------------------


def test_summary_round_trip(tmp_path):
    s = MetricSummary.of([0.1, 0.2, 0.4])
    write_summary_csv(s, tmp_path / "a.csv")
    back = read_summary_csv(tmp_path / "a.csv")
    assert back["median"] == pytest.approx(0.2) and back["count"] == 3
    assert s.median <= s.max and s.rmse >= 0


def test_timing_csv_one_row_per_keyframe(tmp_path):
    rows = [KeyframeTiming(k, 1.0 + k, 0.5) for k in range(4)]
    write_timing_csv(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "keyframe,t_opt_ms,t_mesh_ms" and len(lines) == 5
