import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from bncbf.dynamics import (
    MASKS,
    PitchSingularityError,
    eta_dot,
    jacobian,
    nominal_input,
    step,
    wrap_angle,
)
from bncbf.geometry import body_to_world


def reference(eta, nu, T):
    sol = solve_ivp(lambda t, x: eta_dot(x, nu), (0, T), eta, method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


def test_rk4_agrees_with_high_order_reference():
    rng = np.random.default_rng(0)
    for _ in range(10):
        eta = np.r_[rng.uniform(-1, 1, 3), rng.uniform(-0.5, 0.5), rng.uniform(-1, 1)]
        nu = rng.uniform(-0.2, 0.2, 5)
        ref = reference(eta, nu, 0.1)
        assert np.allclose(step(eta, nu, 0.1), ref, atol=1e-9)


def test_rk4_fourth_order():
    eta = np.array([0, 0, 0, 0.2, 0.3])
    nu = np.array([0.2, 0.1, -0.1, 0.15, 0.2])
    ref = reference(eta, nu, 1.0)
    errs = []
    for n in (4, 8):
        x = eta.copy()
        for _ in range(n):
            x = step(x, nu, 1.0 / n)
        errs.append(np.linalg.norm(x - ref))
    assert 12 < errs[0] / errs[1] < 20  # 16 for a fourth-order method


def test_surge_moves_along_heading():
    eta = np.array([1.0, 2.0, 0.5, 0.0, 0.7])
    out = step(eta, [0.2, 0, 0, 0, 0], 0.5)
    assert np.allclose(out[:3], eta[:3] + 0.1 * np.array([np.cos(0.7), np.sin(0.7), 0]))
    assert out[4] == pytest.approx(0.7)


def test_zero_input_is_stationary():
    eta = np.array([1.0, -2.0, 0.3, 0.4, -1.0])
    assert np.array_equal(step(eta, np.zeros(5), 0.1), eta)
    assert np.array_equal(eta_dot(eta, np.zeros(5)), np.zeros(5))


def test_jacobian_blocks():
    eta = np.array([0, 0, 0, 0.3, 0.4])
    J = jacobian(eta)
    assert np.allclose(J[:3, :3], body_to_world(0.3, 0.4))
    assert J[4, 4] == pytest.approx(1 / np.cos(0.3))
    with pytest.raises(PitchSingularityError):
        jacobian([0, 0, 0, np.pi / 2, 0])


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -np.pi < w <= np.pi
    assert np.isclose(np.cos(w), np.cos(a)) and np.isclose(np.sin(w), np.sin(a))


def test_wrap_on_step():
    out = step([0, 0, 0, 0, 3.1], [0, 0, 0, 0, 0.2], 1.0)
    assert out[4] < 0


@pytest.mark.parametrize("mask", ["usv", "uuv", "static"])
def test_nominal_respects_mask(mask):
    rng = np.random.default_rng(1)
    for _ in range(10):
        eta = np.r_[rng.uniform(-1, 1, 3), 0.0, rng.uniform(-1, 1)]
        goal = np.r_[rng.uniform(-5, 5, 3), 0.0, rng.uniform(-1, 1)]
        nu = nominal_input(eta, goal, mask)
        assert np.all(nu[MASKS[mask] == 0] == 0)
        assert np.all(np.abs(nu) <= 0.2 + 1e-15)


def test_nominal_points_toward_goal():
    eta = np.array([0, 0, 0, 0, 0.5])
    goal = np.array([0.1, 0.05, -0.02, 0.01, 0.52])
    nu = nominal_input(eta, goal, "full", u_max=10.0)
    # unsaturated: one unit of time along the body velocities closes the error
    assert np.allclose(eta_dot(eta, nu)[:3], goal[:3] - eta[:3])
    assert nu[4] == pytest.approx(0.02)


def test_nominal_wraps_yaw_error():
    nu = nominal_input([0, 0, 0, 0, 3.0], [0, 0, 0, 0, -3.0], "full", u_max=10.0)
    assert nu[4] == pytest.approx(2 * np.pi - 6.0)


def test_jacobian_entries_and_inverse():
    assert np.array_equal(jacobian(np.zeros(5)), np.eye(5))
    assert jacobian([0, 0, 0, np.pi / 3, 0])[4, 4] == pytest.approx(2.0)
    rng = np.random.default_rng(2)
    for _ in range(20):
        eta = np.r_[rng.uniform(-1, 1, 3), rng.uniform(-1.4, 1.4), rng.uniform(-np.pi, np.pi)]
        J = jacobian(eta)
        assert np.allclose(J @ np.linalg.inv(J), np.eye(5), atol=1e-10)


def test_nominal_saturates_toward_goal_ahead():
    nu = nominal_input(np.zeros(5), [1.0, 0, 0, 0, 0], "full")
    assert np.allclose(nu, [0.2, 0, 0, 0, 0])
    assert np.array_equal(nominal_input(np.ones(5) * 0.1, np.ones(5) * 0.1, "full"), np.zeros(5))


def test_closed_loop_converges():
    rng = np.random.default_rng(3)
    for _ in range(5):
        eta = np.r_[rng.uniform(-5, 5, 3), rng.uniform(-0.5, 0.5), rng.uniform(-np.pi, np.pi)]
        goal = np.r_[rng.uniform(-5, 5, 3), 0.0, rng.uniform(-np.pi, np.pi)]
        for _ in range(600):
            eta = step(eta, nominal_input(eta, goal, "full"), 0.1)
        err = eta - goal
        err[4] = wrap_angle(err[4])
        assert np.linalg.norm(err) < 0.05
