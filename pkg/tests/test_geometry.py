import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regvio.geometry import (
    Plane,
    Pose,
    angle_between_normals,
    point_plane_signed_distance,
    right_jacobian,
    right_jacobian_batch,
    right_jacobian_inv,
    right_jacobian_inv_batch,
    s2_basis,
    s2_local,
    s2_retract,
    so3_exp,
    so3_exp_batch,
    so3_log,
    so3_log_batch,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
unit3 = vec3.filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: v / np.linalg.norm(v))


def test_exp_zero_is_identity():
    assert np.array_equal(so3_exp(np.zeros(3)), np.eye(3))


def test_exp_quarter_turn_about_z():
    R = so3_exp(np.array([0.0, 0.0, np.pi / 2]))
    assert np.allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


@settings(max_examples=300)
@given(vec3.filter(lambda w: np.linalg.norm(w) <= 3.0))
def test_log_exp_round_trip(w):
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)


@given(vec3)
def test_exp_is_rotation(w):
    R = so3_exp(w)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_log_near_pi():
    w = np.array([0.0, np.pi - 1e-9, 0.0])
    assert np.allclose(so3_exp(so3_log(so3_exp(w))), so3_exp(w), atol=1e-9)


def test_batch_versions_match_scalar():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(50, 3))
    W[:5] *= 1e-9
    for fb, fs in [(so3_exp_batch, so3_exp), (right_jacobian_batch, right_jacobian), (right_jacobian_inv_batch, right_jacobian_inv)]:
        B = fb(W)
        for k in range(len(W)):
            assert np.allclose(B[k], fs(W[k]), atol=1e-12)
    Rs = so3_exp_batch(W)
    L = so3_log_batch(Rs)
    for k in range(len(W)):
        assert np.allclose(L[k], so3_log(Rs[k]), atol=1e-12)


def test_pose_compose_inverse():
    rng = np.random.default_rng(0)
    A, B, C = (Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3)) for _ in range(3))
    assert np.allclose(((A * B) * C).matrix(), (A * (B * C)).matrix(), atol=1e-12)
    I = A.inverse() * A
    assert np.allclose(I.matrix(), np.eye(4), atol=1e-9)


# --- unit sphere ---------------------------------------------------------------


def test_s2_retract_zero_tangent():
    n = np.array([0.0, 0.0, 1.0])
    assert np.array_equal(s2_retract(n, np.zeros(2)), n)


def test_s2_retract_basis_example():
    n = np.array([0.0, 0.0, 1.0])
    assert np.allclose(s2_retract(n, np.array([np.pi / 2, 0.0])), [0.0, -1.0, 0.0], atol=1e-15)


def test_s2_basis_rule():
    # smallest |n.e| is x (lowest index on ties); b1 = x cross n normalized
    n = np.array([0.0, 0.0, 1.0])
    b1, b2 = s2_basis(n)
    assert np.allclose(b1, np.cross([1.0, 0.0, 0.0], n))
    assert np.allclose(b2, np.cross(n, b1))


@settings(max_examples=300)
@given(unit3, st.tuples(finite, finite).map(np.array))
def test_s2_retract_unit_norm(n, v):
    assert abs(np.linalg.norm(s2_retract(n, v)) - 1.0) < 1e-12


@given(unit3, st.tuples(st.floats(-1, 1), st.floats(-1, 1)).map(np.array))
def test_s2_local_inverts_retract(n, v):
    assert np.allclose(s2_local(n, s2_retract(n, v)), v, atol=1e-8)


@given(unit3)
def test_s2_basis_orthonormal(n):
    b1, b2 = s2_basis(n)
    M = np.column_stack([b1, b2, n])
    assert np.allclose(M.T @ M, np.eye(3), atol=1e-12)


# --- planes ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "n,d,rho,expected",
    [((0, 0, 1), 1.0, (3, 4, 1), 0.0), ((0, 0, 1), 1.0, (2, 3, 4), 3.0), ((1, 0, 0), 2.0, (0, 5, 5), -2.0)],
)
def test_signed_distance_examples(n, d, rho, expected):
    assert point_plane_signed_distance(Plane(np.array(n, float), d), np.array(rho, float)) == expected


@given(unit3, st.floats(-5, 5))
def test_canonical_idempotent_and_sign_free(n, d):
    p = Plane(n, d).canonical()
    q = Plane(-n, -d).canonical()
    assert np.array_equal(p.canonical().normal, p.normal) and p.canonical().distance == p.distance
    assert np.allclose(p.normal, q.normal) and np.isclose(p.distance, q.distance)
    k = int(np.argmax(np.abs(p.normal)))
    assert p.normal[k] > 0


@given(unit3, st.floats(-5, 5), vec3)
def test_signed_distance_canonical_invariance(n, d, rho):
    raw = Plane(n, d)
    c = raw.canonical()
    a, b = point_plane_signed_distance(raw, rho), point_plane_signed_distance(c, rho)
    # canonicalization may flip the orientation, never the unsigned distance
    assert np.isclose(abs(a), abs(b), atol=1e-12)
    if raw.canonical().normal @ n > 0:
        assert np.isclose(a, b, atol=1e-12)


def test_angle_between_normals_is_sign_agnostic():
    n = np.array([1.0, 0.0, 0.0])
    assert angle_between_normals(n, -n) == 0.0
    assert np.isclose(angle_between_normals(n, np.array([0.0, 1.0, 0.0])), np.pi / 2)
