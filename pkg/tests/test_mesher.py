import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cocircular, hull_area2, legal_triangles, triangle_area2
from regvio.delaunay import delaunay
from regvio.mesher import (
    FilterParams,
    Keypoint,
    Mesh3D,
    filter_faces,
    lift_to_3d,
    make_face,
    read_ply,
    triangulate_2d,
    update_mesh,
    write_mesh_ply,
    write_point_cloud_ply,
)


def kps(points, ids=None):
    ids = range(len(points)) if ids is None else ids
    return [Keypoint(i, tuple(map(float, p))) for i, p in zip(ids, points)]


# --- triangulate_2d --------------------------------------------------------------


def test_three_points_one_face():
    assert triangulate_2d(kps([(0, 0), (1, 0), (0, 1)])) == {(0, 1, 2)}


def test_interior_point_fans_three_faces():
    faces = triangulate_2d(kps([(0, 0), (1, 0), (0, 1), (0.2, 0.2)]))
    assert faces == {(0, 1, 3), (1, 2, 3), (0, 2, 3)}


def test_unit_square_tie_break():
    # both diagonals are legal; the one through the lexicographically smallest point (0,0) wins
    faces = triangulate_2d(kps([(0, 0), (1, 0), (1, 1), (0, 1)]))
    assert faces == {(0, 1, 2), (0, 2, 3)}
    # same rule no matter which id the smallest point carries
    faces = triangulate_2d(kps([(1, 1), (0, 1), (0, 0), (1, 0)]))
    assert faces == {(0, 2, 3), (0, 1, 2)}


@pytest.mark.parametrize("pts", [[], [(0, 0)], [(0, 0), (1, 1)], [(0, 0), (1, 1), (2, 2), (3, 3)]])
def test_degenerate_inputs_give_no_faces(pts):
    assert triangulate_2d(kps(pts)) == set()


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        triangulate_2d([Keypoint(1, (0.0, 0.0)), Keypoint(1, (1.0, 0.0)), Keypoint(2, (0.0, 1.0))])


def test_faces_keyed_by_landmark_id():
    faces = triangulate_2d(kps([(0, 0), (1, 0), (0, 1)], ids=[40, 7, 19]))
    assert faces == {(7, 19, 40)}


def test_make_face_canonical():
    assert make_face(9, 2, 5) == make_face(5, 9, 2) == (2, 5, 9)
    with pytest.raises(ValueError):
        make_face(1, 1, 2)


pts_strategy = st.lists(
    st.tuples(st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False)), min_size=3, max_size=40, unique=True
)


@settings(max_examples=150, deadline=None)
@given(pts_strategy)
def test_empty_circumcircle_property(points):
    P = np.array(points)
    tris = delaunay(P)
    for a, b, c in tris:
        A, B, C = P[a], P[b], P[c]
        # circumcircle test with the same relative tolerance as the triangulator
        M = np.array([[*(X - C), np.dot(X - C, X - C)] for X in (A, B)])
        for m in range(len(P)):
            if m in (a, b, c):
                continue
            rows = np.array([[*(X - P[m]), np.dot(X - P[m], X - P[m])] for X in (A, B, C)])
            det = np.linalg.det(rows)
            scale = np.abs(rows).prod(axis=1).sum() + np.abs(rows).sum() ** 3
            assert det <= 1e-9 * scale, (a, b, c, m)
        del M


@settings(max_examples=50, deadline=None)
@given(pts_strategy)
def test_retriangulation_is_deterministic(points):
    k = kps(points)
    assert triangulate_2d(k) == triangulate_2d(list(reversed(k)))


def delaunay_oracle_case(P: np.ndarray) -> None:
    tris = {tuple(sorted(t)) for t in delaunay(P).tolist()}
    legal = legal_triangles(P)
    if hull_area2(P) == 0:
        assert tris == set()
        return
    assert tris <= legal
    assert sum(triangle_area2(P, t) for t in tris) == hull_area2(P)
    edges = {}
    for t in tris:
        for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
            edges.setdefault(e, []).append(t)
    cocirc = False
    for (u, v), ts in edges.items():
        if len(ts) == 2:
            w1 = (set(ts[0]) - {u, v}).pop()
            w2 = (set(ts[1]) - {u, v}).pop()
            quad = (u, v, w1, w2)
            if cocircular(P, quad):
                cocirc = True
                smallest = min(quad, key=lambda i: (P[i, 0], P[i, 1]))
                assert smallest in (u, v)
    if not cocirc:
        assert tris == legal


def random_point_sets(count: int, seed: int = 2024):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(3, 13))
        if k % 4 == 3:
            # integer grid subsets exercise cocircular and collinear cases
            cells = rng.choice(16, size=min(n, 16), replace=False)
            P = np.column_stack([cells % 4, cells // 4]).astype(float)
        else:
            P = rng.uniform(0, 10, size=(n, 2))
        out.append(P)
    return out


def test_delaunay_matches_exhaustive_oracle():
    for P in random_point_sets(200):
        delaunay_oracle_case(P)


# --- lift / filter / update ------------------------------------------------------


def test_lift_examples():
    assert lift_to_3d(set(), {}) == Mesh3D()
    lm = {1: np.zeros(3), 2: np.array([1.0, 0, 0]), 3: np.array([0, 1.0, 0])}
    m = lift_to_3d({(1, 2, 3)}, lm)
    assert m.faces == {(1, 2, 3)} and set(m.vertices) == {1, 2, 3}
    m = lift_to_3d({(1, 2, 3), (2, 3, 99)}, lm)
    assert m.faces == {(1, 2, 3)}
    m.check()


def equilateral(side, z=0.0):
    return {
        0: np.array([0.0, 0.0, z]),
        1: np.array([side, 0.0, z]),
        2: np.array([side / 2, side * np.sqrt(3) / 2, z]),
    }


def test_filter_examples():
    keep = filter_faces(lift_to_3d({(0, 1, 2)}, equilateral(0.3)))
    assert keep.faces == {(0, 1, 2)}
    long = {0: np.zeros(3), 1: np.array([5.0, 0, 0]), 2: np.array([2.5, 4.0, 0])}
    assert filter_faces(lift_to_3d({(0, 1, 2)}, long)).faces == set()
    flat = {0: np.zeros(3), 1: np.array([1.0, 0, 0]), 2: np.array([0.5, 0, 0])}
    out = filter_faces(lift_to_3d({(0, 1, 2)}, flat))
    assert out.faces == set() and out.vertices == {}


def test_filter_ratio_and_angle_thresholds():
    p = FilterParams(max_edge_length=100.0, max_edge_ratio=10.0, min_angle_deg=3.0)
    sliver = {0: np.zeros(3), 1: np.array([1.0, 0, 0]), 2: np.array([0.5, 0.01, 0])}
    assert filter_faces(lift_to_3d({(0, 1, 2)}, sliver), p).faces == set()


def _mesh(faces, seed=0):
    rng = np.random.default_rng(seed)
    ids = sorted({i for f in faces for i in f})
    return Mesh3D({i: rng.normal(size=3) for i in ids}, set(faces))


def test_update_examples():
    f1, f2 = (1, 2, 3), (3, 4, 5)
    g = _mesh([f1])
    assert update_mesh(g, g) == g
    loc = _mesh([f1, f2])
    assert update_mesh(g, loc).faces == {f1, f2}
    pruned = update_mesh(g, loc, {2})
    assert pruned.faces == {f2} and 2 not in pruned.vertices


def test_update_refreshes_positions():
    g = _mesh([(1, 2, 3)])
    new = {1: np.array([9.0, 9.0, 9.0])}
    out = update_mesh(g, Mesh3D(), (), new)
    assert np.array_equal(out.vertices[1], new[1])
    assert np.array_equal(out.vertices[2], g.vertices[2])


face_lists = st.lists(
    st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(0, 15)).filter(lambda t: len(set(t)) == 3).map(lambda t: make_face(*t)),
    max_size=12,
)


@settings(max_examples=100)
@given(face_lists, face_lists, face_lists, st.sets(st.integers(0, 15), max_size=4))
def test_update_properties(gf, af, bf, gone):
    pos = {i: np.full(3, float(i)) for i in range(16)}
    G = lift_to_3d(set(gf), pos)
    A = lift_to_3d(set(af), pos)
    B = lift_to_3d({f for f in bf if f not in A.faces and set(f).isdisjoint(A.vertices)}, pos)
    once = update_mesh(G, A, gone)
    assert update_mesh(once, A, gone) == once
    ab = update_mesh(update_mesh(G, A, gone), B, gone)
    ba = update_mesh(update_mesh(G, B, gone), A, gone)
    assert ab == ba
    for f in ab.faces:
        assert set(f).isdisjoint(gone)
    used = {i for f in ab.faces for i in f}
    assert used == set(ab.vertices)


def test_ply_round_trip(tmp_path):
    m = _mesh([(10, 20, 30), (20, 30, 40)])
    write_mesh_ply(m, tmp_path / "m.ply")
    v, f = read_ply(tmp_path / "m.ply")
    assert v.shape == (4, 3) and f.tolist() == [[0, 1, 2], [1, 2, 3]]
    assert np.allclose(v[0], m.vertices[10], rtol=1e-8)
    write_point_cloud_ply(np.eye(3), tmp_path / "c.ply")
    v, f = read_ply(tmp_path / "c.ply")
    assert np.array_equal(v, np.eye(3)) and f.shape == (0, 3)
    assert (tmp_path / "m.ply").read_text().startswith("ply\nformat ascii 1.0\n")


def test_mesh_update_time_budget():
    import time

    rng = np.random.default_rng(0)
    n = 500
    pix = rng.uniform([0, 0], [752, 480], size=(n, 2))
    pts3 = {i: np.array([3.0, *(pix[i] / 200.0)]) for i in range(n)}
    k = kps(pix)
    triangulate_2d(k)
    best = np.inf
    for _ in range(5):
        t0 = time.perf_counter()
        local = filter_faces(lift_to_3d(triangulate_2d(k), pts3))
        update_mesh(Mesh3D(), local, (), pts3)
        best = min(best, time.perf_counter() - t0)
    assert best < 0.010
