import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import planar_patch_mesh
from regvio.geometry import Plane
from regvio.mesher import Mesh3D, make_face
from regvio.regularity import (
    DetectorParams,
    PlaneCandidate,
    associate_landmarks,
    detect_horizontal_planes,
    detect_planes,
    detect_vertical_planes,
    match_existing,
    plane_match_error,
    segment_faces_by_normal,
)

PARAMS = DetectorParams()


def single_face(corners):
    return Mesh3D({i: np.array(c, float) for i, c in enumerate(corners)}, {(0, 1, 2)})


# --- segmentation ---------------------------------------------------------------


def test_floor_face_is_horizontal():
    h, v = segment_faces_by_normal(single_face([(0, 0, 0), (1, 0, 0), (0, 1, 0)]))
    assert h == {(0, 1, 2)} and v == set()


def test_wall_face_is_vertical():
    h, v = segment_faces_by_normal(single_face([(0, 0, 0), (0, 1, 0), (0, 0, 1)]))
    assert h == set() and v == {(0, 1, 2)}


def test_tilted_face_in_neither_set():
    h, v = segment_faces_by_normal(single_face([(0, 0, 0), (0, 1, 0), (1, 0, 1)]), np.radians(10))
    assert h == set() and v == set()


@settings(max_examples=200)
@given(st.floats(0, 90), st.floats(0, 360))
def test_segmentation_follows_angle(tilt, az):
    t, a = np.radians(tilt), np.radians(az)
    n = np.array([np.sin(t) * np.cos(a), np.sin(t) * np.sin(a), np.cos(t)])
    u = np.cross(n, [1.0, 0, 0]) if abs(n[0]) < 0.9 else np.cross(n, [0, 1.0, 0])
    u /= np.linalg.norm(u)
    w = np.cross(n, u)
    h, v = segment_faces_by_normal(single_face([np.zeros(3), u, w]))
    tol = 10.0
    if tilt < tol - 1e-6:
        assert h and not v
    elif tilt > tol + 1e-6 and abs(tilt - 90) > tol + 1e-6:
        assert not h and not v
    elif abs(tilt - 90) < tol - 1e-6:
        assert v and not h
    assert not (h and v)


# --- horizontal ------------------------------------------------------------------


def flat_faces(n_faces, z, start=0, x0=0.0):
    mesh = Mesh3D()
    for k in range(n_faces):
        a, b, c = start + 3 * k, start + 3 * k + 1, start + 3 * k + 2
        mesh.vertices[a] = np.array([x0 + k, 0.0, z])
        mesh.vertices[b] = np.array([x0 + k + 0.5, 0.0, z])
        mesh.vertices[c] = np.array([x0 + k, 0.5, z])
        mesh.faces.add((a, b, c))
    return mesh


def test_thirty_faces_at_two_metres():
    mesh = flat_faces(30, 2.0)
    cands = detect_horizontal_planes(mesh.faces, mesh, PARAMS)
    assert len(cands) == 1
    c = cands[0]
    assert np.allclose(c.plane.normal, [0, 0, 1])
    assert abs(c.plane.distance - 2.0) <= PARAMS.height_bin
    assert c.support == 30


def test_nineteen_faces_below_threshold():
    mesh = flat_faces(19, 0.0)
    assert detect_horizontal_planes(mesh.faces, mesh, PARAMS) == []


def test_twenty_faces_reach_threshold():
    mesh = flat_faces(20, 0.0)
    assert len(detect_horizontal_planes(mesh.faces, mesh, PARAMS)) == 1


def test_empty_input():
    assert detect_horizontal_planes(set(), Mesh3D(), PARAMS) == []
    assert detect_vertical_planes(set(), Mesh3D(), PARAMS) == []
    assert detect_planes(Mesh3D()) == []


def test_floor_and_ceiling_sorted_by_support():
    floor = flat_faces(40, -1.0)
    ceil = flat_faces(25, 1.5, start=1000)
    mesh = Mesh3D({**floor.vertices, **ceil.vertices}, floor.faces | ceil.faces)
    cands = detect_horizontal_planes(mesh.faces, mesh, PARAMS)
    assert [c.support for c in cands] == [40, 25]
    assert abs(cands[0].plane.distance + 1.0) <= PARAMS.height_bin
    assert abs(cands[1].plane.distance - 1.5) <= PARAMS.height_bin


# --- vertical --------------------------------------------------------------------


def test_wall_at_x3():
    mesh, _ = planar_patch_mesh([(0, 3.0, (0.0, 0.0))], spacing=0.4, extent=2.0, noise=0.0)
    assert len(mesh.faces) >= 25
    cands = detect_vertical_planes(mesh.faces, mesh, PARAMS)
    assert len(cands) == 1
    assert np.allclose(np.abs(cands[0].plane.normal), [1, 0, 0], atol=np.sin(np.radians(PARAMS.azimuth_bin_deg)))
    assert abs(abs(cands[0].plane.distance) - 3.0) <= PARAMS.distance_bin


def test_two_perpendicular_walls():
    mesh, _ = planar_patch_mesh([(0, 3.0, (0.0, 0.0)), (1, -2.0, (0.0, 0.0))], spacing=0.4, noise=0.0)
    cands = detect_vertical_planes(mesh.faces, mesh, PARAMS)
    assert len(cands) == 2
    gt = [Plane(np.array([1.0, 0, 0]), 3.0), Plane(np.array([0, 1.0, 0]), -2.0)]
    for g in gt:
        assert any(plane_match_error(c.plane, g)[0] <= np.radians(PARAMS.azimuth_bin_deg) and plane_match_error(c.plane, g)[1] <= PARAMS.distance_bin for c in cands)


def test_vertical_normals_excluded_upstream():
    mesh = flat_faces(30, 0.0)
    _, vert = segment_faces_by_normal(mesh)
    assert detect_vertical_planes(vert, mesh, PARAMS) == []


def test_azimuth_wraps_around():
    # a wall whose normal azimuth straddles 0 / 2pi still yields one candidate
    mesh, _ = planar_patch_mesh([(0, 2.0, (0.0, 0.0))], spacing=0.4, noise=0.0)
    rot = np.array([[np.cos(0.02), -np.sin(0.02), 0], [np.sin(0.02), np.cos(0.02), 0], [0, 0, 1]])
    for s in (1, -1):
        R = rot if s > 0 else rot.T
        m = Mesh3D({i: R @ v for i, v in mesh.vertices.items()}, set(mesh.faces))
        assert len(detect_vertical_planes(m.faces, m, PARAMS)) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_full_turn_rotation_invariance(seed):
    mesh, _ = planar_patch_mesh([(0, 2.5, (0.0, 0.0)), (1, 1.5, (0.0, 0.0))], spacing=0.4, noise=0.01, seed=seed)
    a = 2 * np.pi
    R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    m2 = Mesh3D({i: R @ v for i, v in mesh.vertices.items()}, set(mesh.faces))
    c1, c2 = detect_planes(mesh), detect_planes(m2)
    assert [c.supporting_faces for c in c1] == [c.supporting_faces for c in c2]


def _plane_of(mesh, f):
    P = np.array([mesh.vertices[i] for i in f])
    n = np.cross(P[1] - P[0], P[2] - P[0])
    n /= np.linalg.norm(n)
    return Plane(n, float(n @ P.mean(axis=0)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_candidate_invariants(seed):
    mesh, _ = planar_patch_mesh(
        [(2, -1.0, (0.0, 0.0)), (0, 2.0, (0.0, 0.0)), (1, 2.5, (0.5, 0.0))], spacing=0.35, noise=0.01, seed=seed
    )
    cands = detect_planes(mesh)
    assert cands == detect_planes(mesh)
    for c in cands:
        assert c.support >= PARAMS.min_support
        assert c.supporting_landmarks == associate_landmarks(c)
        vertical = abs(c.plane.normal[2]) < 0.5
        width = PARAMS.distance_bin if vertical else PARAMS.height_bin
        for f in c.supporting_faces:
            if vertical:
                fp = _plane_of(mesh, f)
                assert plane_match_error(fp, c.plane)[1] <= 2 * width
            else:
                z = np.mean([mesh.vertices[i][2] for i in f])
                assert abs(z - c.plane.distance) <= 2 * width


# --- association and matching --------------------------------------------------


def test_associate_examples():
    pl = Plane(np.array([0, 0, 1.0]), 0.0)
    assert associate_landmarks(PlaneCandidate(pl, frozenset({(4, 7, 9)}))) == {4, 7, 9}
    assert associate_landmarks(PlaneCandidate(pl, frozenset({(1, 2, 3), (2, 3, 4)}))) == {1, 2, 3, 4}
    assert associate_landmarks(PlaneCandidate(pl, frozenset())) == set()


def cand(n, d):
    n = np.asarray(n, float)
    return PlaneCandidate(Plane(n / np.linalg.norm(n), d).canonical())


def test_match_identical():
    p = Plane(np.array([1.0, 0, 0]), 2.0)
    matched, new = match_existing([cand([1, 0, 0], 2.0)], [p])
    assert matched == [(0, 0)] and new == []


def test_match_within_defaults():
    a = np.radians(5)
    matched, new = match_existing([cand([np.cos(a), np.sin(a), 0], 2.05)], [Plane(np.array([1.0, 0, 0]), 2.0)])
    assert matched == [(0, 0)]


def test_perpendicular_is_new():
    c = cand([0, 1, 0], 2.0)
    matched, new = match_existing([c], [Plane(np.array([1.0, 0, 0]), 2.0)])
    assert matched == [] and new == [c]


def test_match_picks_closest_angle():
    a = np.radians(3)
    existing = [Plane(np.array([np.cos(2 * a), np.sin(2 * a), 0]), 2.0), Plane(np.array([1.0, 0, 0]), 2.0)]
    matched, _ = match_existing([cand([np.cos(a), np.sin(a), 0], 2.0)], existing)
    assert matched == [(0, 0)] or matched == [(0, 1)]
    # equidistant in angle: ties go to the smaller distance gap
    existing = [Plane(np.array([np.cos(2 * a), np.sin(2 * a), 0]), 2.08), Plane(np.array([1.0, 0, 0]), 2.01)]
    matched, _ = match_existing([cand([np.cos(a), np.sin(a), 0], 2.0)], existing)
    assert matched == [(0, 1)]


@settings(max_examples=200)
@given(st.floats(0, 30), st.floats(0, 0.3))
def test_match_threshold_rule(angle_deg, gap):
    a = np.radians(angle_deg)
    matched, new = match_existing([cand([np.cos(a), np.sin(a), 0], 2.0 + gap)], [Plane(np.array([1.0, 0, 0]), 2.0)])
    inside = angle_deg <= 10 - 1e-9 and gap <= 0.1 - 1e-9
    outside = angle_deg > 10 + 1e-9 or gap > 0.1 + 1e-9
    if inside:
        assert matched
    if outside:
        assert new


# --- detection accuracy ------------------------------------------------------------

LAYOUTS = [
    [(2, -1.2, (0.0, 0.0))],
    [(0, 3.0, (0.0, 0.5))],
    [(2, -1.2, (0.0, 0.0)), (0, 3.0, (0.0, 0.2))],
    [(2, -1.2, (0.0, 0.0)), (0, 3.0, (0.0, 0.2)), (1, -2.5, (0.5, 0.2))],
    [(2, 1.5, (0.0, 0.0)), (0, -2.0, (0.3, 0.3)), (1, 3.0, (-0.5, 0.0))],
]


def gt_plane(axis, offset):
    n = np.zeros(3)
    n[axis] = 1.0
    return Plane(n, offset)


def detection_scores(layout, seed):
    mesh, face_plane = planar_patch_mesh(layout, spacing=0.3, extent=2.0, noise=0.01, seed=seed)
    cands = detect_planes(mesh)
    recall = []
    for axis, offset, _ in layout:
        g = gt_plane(axis, offset)
        width = PARAMS.height_bin if axis == 2 else PARAMS.distance_bin
        ok = [c for c in cands if plane_match_error(c.plane, g)[0] <= np.radians(PARAMS.match_normal_tol_deg)]
        recall.append(any(plane_match_error(c.plane, g)[1] <= width for c in ok))
    return recall, cands, face_plane


@pytest.mark.parametrize("layout", LAYOUTS)
def test_synthetic_plane_recall(layout):
    for seed in range(5):
        recall, cands, fp = detection_scores(layout, seed)
        assert all(recall)
        assert all(c.support >= 20 for c in cands)
        assert min(fp.values(), default=0) >= 0
