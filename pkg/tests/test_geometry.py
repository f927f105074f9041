import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bncbf.geometry import (
    DomainError,
    EmptyPolytopeError,
    GeometryError,
    Polytope,
    PolytopeTemplate,
    body_to_world,
    box_polytope,
    box_template,
    chebyshev_center,
    instantiate,
    is_bounded,
    pose_jacobians,
    rotation_derivatives,
    rotation_matrix,
    tetrahedron_template,
)

angles = st.tuples(
    st.floats(-1.4, 1.4, allow_nan=False), st.floats(-np.pi, np.pi, allow_nan=False)
)


@given(angles)
def test_rotation_is_orthonormal(ang):
    R = rotation_matrix(*ang)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    assert np.allclose(body_to_world(*ang), R.T)


def test_rotation_axes():
    # yaw of 90 deg turns the body x-axis onto world y
    assert np.allclose(body_to_world(0.0, np.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    # positive pitch tilts the nose down (z points down in the body frame)
    assert body_to_world(0.3, 0.0)[2, 0] < 0


@given(angles)
def test_rotation_derivatives_match_fd(ang):
    th, ps = ang
    dt, dp = rotation_derivatives(th, ps)
    h = 1e-6
    fd_t = (rotation_matrix(th + h, ps) - rotation_matrix(th - h, ps)) / (2 * h)
    fd_p = (rotation_matrix(th, ps + h) - rotation_matrix(th, ps - h)) / (2 * h)
    assert np.allclose(dt, fd_t, atol=1e-8)
    assert np.allclose(dp, fd_p, atol=1e-8)


def test_pitch_singularity_raises():
    with pytest.raises(DomainError):
        rotation_matrix(np.pi / 2, 0.0)


@given(
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    angles,
    st.floats(0.3, 3.0),
)
@settings(max_examples=50)
def test_instantiate_moves_vertices_rigidly(p, ang, scale):
    tpl = tetrahedron_template(scale)
    pose = np.array([*p, *ang])
    P = instantiate(tpl, pose)
    world = tpl.vertices @ body_to_world(*ang).T + np.array(p)
    for v in world:
        assert P.contains(v, tol=1e-9)
        assert np.sum(np.abs(P.A @ v - P.b) < 1e-9) == 3
    assert len(P.vertices()) == 4


def test_pose_jacobians_match_fd():
    rng = np.random.default_rng(3)
    tpl = tetrahedron_template(1.3)
    for _ in range(20):
        pose = np.r_[rng.uniform(-2, 2, 3), rng.uniform(-1, 1), rng.uniform(-3, 3)]
        dA, db = pose_jacobians(tpl, pose)
        for k in range(5):
            e = np.zeros(5)
            e[k] = 1e-6
            Pp, Pm = instantiate(tpl, pose + e), instantiate(tpl, pose - e)
            assert np.allclose(dA[:, :, k], (Pp.A - Pm.A) / 2e-6, atol=1e-7)
            assert np.allclose(db[:, k], (Pp.b - Pm.b) / 2e-6, atol=1e-7)


def test_templates_validate():
    tetrahedron_template().validate()
    box_template([0.5, 1.0, 0.2]).validate()
    c, r = tetrahedron_template().bounding_sphere()
    assert np.all(np.linalg.norm(tetrahedron_template().vertices - c, axis=1) <= r + 1e-12)


def test_bad_templates_rejected():
    with pytest.raises(GeometryError):
        PolytopeTemplate(np.eye(3), np.ones(3)).validate()  # unbounded
    A = np.vstack([np.eye(3), -np.eye(3)])
    with pytest.raises(EmptyPolytopeError):
        PolytopeTemplate(A, np.array([1, 1, 1, -1, 1, 1.0])).validate()
    with pytest.raises(GeometryError):
        PolytopeTemplate(np.eye(3), np.ones(2))


def test_chebyshev_center_of_box():
    P = box_polytope([0, 0, 0], [2, 4, 6])
    c, r = chebyshev_center(P)
    assert np.isclose(r, 1.0)
    assert np.isclose(c[0], 1.0)
    assert is_bounded(P)
    assert not is_bounded(Polytope(np.eye(3), np.ones(3)))


def test_polytope_is_read_only():
    P = box_polytope([0, 0, 0], [1, 1, 1])
    with pytest.raises(ValueError):
        P.A[0, 0] = 2.0
    assert P.translated([1, 0, 0]).contains([1.5, 0.5, 0.5])
