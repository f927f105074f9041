"""Kinematic maneuvering model ``eta_dot = J(eta) nu`` and the nominal controller.

State ``eta = [x, y, z, theta, psi]``; input ``nu = [u, v, w, q, r]`` with body
velocities (m/s) and pitch/yaw rates (rad/s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DomainError, body_to_world, rotation_matrix

PITCH_GUARD = 1e-6
U_MAX = 0.2

# Which input components an agent can command.
MASKS = {
    "full": np.array([1.0, 1.0, 1.0, 1.0, 1.0]),
    "usv": np.array([1.0, 0.0, 0.0, 0.0, 1.0]),  # surge and yaw only
    "uuv": np.array([1.0, 1.0, 0.0, 0.0, 1.0]),  # constant depth, zero pitch
    "static": np.zeros(5),
}


class PitchSingularityError(DomainError):
    pass


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def _check(theta: float) -> None:
    if abs(theta) >= np.pi / 2 - PITCH_GUARD:
        raise PitchSingularityError(f"pitch {theta!r} too close to +-pi/2")


def jacobian(eta) -> np.ndarray:
    """5x5 velocity transform: body-to-world rotation and Euler-rate block."""
    eta = np.asarray(eta, dtype=float)
    _check(eta[3])
    J = np.zeros((5, 5))
    J[:3, :3] = body_to_world(eta[3], eta[4])
    J[3, 3] = 1.0
    J[4, 4] = 1.0 / np.cos(eta[3])
    return J


def eta_dot(eta, nu) -> np.ndarray:
    return jacobian(eta) @ np.asarray(nu, dtype=float)


def step(eta, nu, dt: float) -> np.ndarray:
    """One RK4 step with ``nu`` held constant; yaw wrapped afterwards."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    eta = np.asarray(eta, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if not np.any(nu):
        return eta.copy()
    k1 = eta_dot(eta, nu)
    k2 = eta_dot(eta + 0.5 * dt * k1, nu)
    k3 = eta_dot(eta + 0.5 * dt * k2, nu)
    k4 = eta_dot(eta + dt * k3, nu)
    out = eta + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[4] = wrap_angle(out[4])
    return out


def nominal_input(eta, goal, mask="full", u_max: float = U_MAX, gain: float = 1.0) -> np.ndarray:
    """Proportional inverse-kinematics controller, masked and saturated.

    ``nu_r = blockdiag(R, 1, 1/cos(theta)) (eta_g - eta)`` with the yaw error
    wrapped to ``(-pi, pi]``.
    """
    eta = np.asarray(eta, dtype=float)
    err = np.asarray(goal, dtype=float) - eta
    err[4] = wrap_angle(err[4])
    _check(eta[3])
    nu = np.empty(5)
    nu[:3] = rotation_matrix(eta[3], eta[4]) @ err[:3]
    nu[3] = err[3]
    nu[4] = err[4] / np.cos(eta[3])
    m = MASKS[mask] if isinstance(mask, str) else np.asarray(mask, dtype=float)
    return np.clip(gain * nu, -u_max, u_max) * m


@dataclass(frozen=True)
class GoalSpec:
    eta_g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.eta_g, dtype=float)
        _check(g[3])
        object.__setattr__(self, "eta_g", g)
