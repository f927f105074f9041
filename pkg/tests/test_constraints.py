import numpy as np
import pytest

from bncbf.constraints import (
    DegenerateSeparationError,
    FovCone,
    LosCorridor,
    RangeBand,
    RegularityError,
    fov_value,
    los_value,
    range_values,
    regularity_value,
    state_value,
)
from bncbf.geometry import box_template, instantiate, rotation_matrix
from oracles import central_diff, segment_box
from sampling import CONES, PSI_MAX, random_pose, tracking_pair


def assert_grad(f, x, g, rel=1e-5):
    fd = central_diff(f, x)
    scale = max(1.0, float(np.max(np.abs(g))))
    assert np.max(np.abs(g - fd)) <= rel * scale, (g, fd)


@pytest.mark.parametrize("kind", ["ellipsoidal", "polyhedral"])
def test_fov_gradient(kind):
    cone = CONES[kind]
    rng = np.random.default_rng(0)
    for _ in range(20):
        ei, ej = tracking_pair(rng, cone)
        x = np.r_[ei, ej]
        for k in range(cone.n_leaves):
            h, g = fov_value(cone, ei, ej, k)
            assert h > 0
            assert_grad(lambda z: fov_value(cone, z[:5], z[5:], k)[0], x, g)


def test_fov_sign():
    cone = FovCone.ellipsoidal(np.radians(15))
    ei = np.zeros(5)
    assert fov_value(cone, ei, np.r_[2.0, 0, 0, 0, 0])[0] > 0
    assert fov_value(cone, ei, np.r_[2.0, 1.0, 0, 0, 0])[0] < 0
    assert fov_value(cone, ei, np.r_[-2.0, 0, 0, 0, 0])[0] < 0
    # on the boundary
    t = np.tan(np.radians(15))
    assert fov_value(cone, ei, np.r_[1.0, t, 0, 0, 0])[0] == pytest.approx(0, abs=1e-12)
    # yaw the observer to face the target
    assert fov_value(cone, np.r_[0, 0, 0, 0, np.pi / 2], np.r_[0, 2.0, 0, 0, 0])[0] > 0


def test_experiment_cone_looks_along_body_z():
    cone = CONES["polyhedral"]
    assert all(cone.value_body(np.array([0, 0, -1.0]), k)[0] > 0 for k in range(4))
    assert any(cone.value_body(np.array([1.0, 0, 0]), k)[0] < 0 for k in range(4))


def test_range_gradient_and_values():
    rng = np.random.default_rng(1)
    band = RangeBand(0.5, 8.0)
    for _ in range(20):
        ei, ej = tracking_pair(rng, CONES["ellipsoidal"])
        x = np.r_[ei, ej]
        (hlo, glo), (hhi, ghi) = range_values(band, ei, ej)
        L = np.linalg.norm(ej[:3] - ei[:3])
        assert hlo == pytest.approx(L - 0.5) and hhi == pytest.approx(8.0 - L)
        assert_grad(lambda z: range_values(band, z[:5], z[5:])[0][0], x, glo)
        assert_grad(lambda z: range_values(band, z[:5], z[5:])[1][0], x, ghi)


def test_state_and_regularity_gradients():
    rng = np.random.default_rng(2)
    for _ in range(20):
        e, f = random_pose(rng), random_pose(rng)
        h, g = state_value(e)
        assert h > 0
        assert_grad(lambda z: state_value(z)[0], e, g)
        h, g = regularity_value(e, f)
        assert_grad(lambda z: regularity_value(z[:5], z[5:])[0], np.r_[e, f], g)


def test_state_value_boundary():
    assert state_value(np.r_[0, 0, 0, 0, PSI_MAX])[0] == pytest.approx(0.0)
    assert state_value(np.r_[0, 0, 0, 0, 1.1 * PSI_MAX])[0] < 0


def test_coincident_agents_rejected():
    with pytest.raises(DegenerateSeparationError):
        fov_value(CONES["ellipsoidal"], np.zeros(5), np.zeros(5))
    with pytest.raises(ValueError):
        RangeBand(2.0, 1.0)


# ---------------------------------------------------------------- LOS


def test_los_corridor_contains_segment():
    rng = np.random.default_rng(3)
    cor = LosCorridor(mu=100.0)
    for _ in range(50):
        pi, pj = rng.uniform(-5, 5, 3), rng.uniform(-5, 5, 3)
        P = cor.build(pi, pj)
        for s in np.linspace(0, 1, 21):
            assert P.contains(s * pi + (1 - s) * pj, tol=1e-9)
        # slim: the corridor never strays far from the segment
        for v in P.vertices():
            s = np.clip((v - pj) @ (pi - pj) / np.sum((pi - pj) ** 2), 0, 1)
            assert np.linalg.norm(v - (pj + s * (pi - pj))) < 2.0 / cor.mu


def test_los_vertical_alignment_raises():
    with pytest.raises(RegularityError):
        LosCorridor().build([0, 0, 0], [0, 0, 2.0])


def test_los_jacobians_match_fd():
    rng = np.random.default_rng(4)
    cor = LosCorridor(mu=50.0)
    for _ in range(20):
        x = rng.uniform(-3, 3, 6)
        dA, db = cor.jacobians(x[:3], x[3:])
        fdA = central_diff(lambda z: cor.build(z[:3], z[3:]).A.ravel(), x).reshape(4, 3, 6)
        fdb = central_diff(lambda z: cor.build(z[:3], z[3:]).b, x)
        assert np.allclose(dA, fdA, atol=1e-6)
        assert np.allclose(db, fdb, atol=1e-6)


def test_los_soundness_against_rotated_box():
    rng = np.random.default_rng(5)
    cor = LosCorridor(mu=100.0, r_los=0.1)
    tpl = box_template([0.4, 0.3, 0.5])
    hits = 0
    for _ in range(40):
        pose = np.r_[rng.uniform(-1, 1, 3), rng.uniform(-0.5, 0.5), rng.uniform(-3, 3)]
        ei, ej = random_pose(rng, 3.0), random_pose(rng, 3.0)
        r = los_value(cor, ei, ej, instantiate(tpl, pose))
        if r.h < 0:
            continue
        hits += 1
        R = rotation_matrix(pose[3], pose[4])
        a, b = R @ (ei[:3] - pose[:3]), R @ (ej[:3] - pose[:3])
        h = np.array([0.4, 0.3, 0.5])
        assert segment_box(a, b, -h, h) >= cor.r_los - 1e-6
    assert hits > 10
