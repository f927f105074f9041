"""Relative-pose barrier encoders.

Smooth encoders return ``(value, gradient)`` with the gradient taken with
respect to the stacked poses ``[eta_i; eta_j]`` (length 10), or ``eta_i``
alone for single-agent terms. Distance-based encoders return a
:class:`~bncbf.distance.DistanceResult`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distance import DistanceResult, min_distance
from .geometry import Polytope, rotation_derivatives, rotation_matrix

SEPARATION_EPS = 1e-9
PSI_MAX = 0.3 * np.pi
REG_MARGIN = 0.001


class DegenerateSeparationError(ValueError):
    pass


class RegularityError(ValueError):
    """Agents are vertically stacked, so the LOS frame is undefined."""


# ---------------------------------------------------------------- field of view


@dataclass(frozen=True, eq=False)
class FovCone:
    """Cone ``-|A p + b| + c_k' p + d_k >= 0`` in the observer body frame.

    ``c`` has one column per leaf. The ellipsoidal preset has a single leaf;
    the polyhedral preset has ``A = 0`` and one leaf per bounding plane.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray  # (3, K)
    d: np.ndarray  # (K,)
    kind: str = "soc"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        d = np.broadcast_to(np.asarray(self.d, dtype=float), (c.shape[1],)).copy()
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

    @property
    def n_leaves(self) -> int:
        return self.c.shape[1]

    @classmethod
    def ellipsoidal(cls, half_angle: float) -> "FovCone":
        """Circular cone about the body x-axis with the given half-angle (rad)."""
        A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        return cls(A, np.zeros(2), np.array([np.tan(half_angle), 0.0, 0.0]), 0.0, "ellipsoidal")

    @classmethod
    def polyhedral(cls, c_columns) -> "FovCone":
        """Polyhedral cone; ``c_columns`` is ``(3, K)`` with one plane normal per column."""
        c = np.asarray(c_columns, dtype=float)
        return cls(np.zeros((3, 3)), np.zeros(3), c, np.zeros(c.shape[1]), "polyhedral")

    def value_body(self, p_body, k: int = 0) -> tuple[float, np.ndarray]:
        """Value and gradient in body-frame relative position."""
        s = self.A @ p_body + self.b
        n = float(np.linalg.norm(s))
        grad = self.c[:, k].copy()
        if n > 0.0:
            grad -= self.A.T @ s / n
        return -n + float(self.c[:, k] @ p_body) + float(self.d[k]), grad


# Camera cone of the pool experiment (rows are the plane normals, not renormalized).
EXPERIMENT_FOV_ROWS = np.array(
    [
        [0.0, -0.64, -0.77],
        [0.83, -0.00, -0.56],
        [-0.83, 0.00, -0.56],
        [0.0, 0.64, -0.77],
    ]
)


def _separation(eta_i, eta_j) -> np.ndarray:
    delta = np.asarray(eta_j[:3], dtype=float) - np.asarray(eta_i[:3], dtype=float)
    if np.linalg.norm(delta) < SEPARATION_EPS:
        raise DegenerateSeparationError("agents coincide")
    return delta


def fov_value(cone: FovCone, eta_i, eta_j, k: int = 0) -> tuple[float, np.ndarray]:
    """Agent ``j`` inside the field of view of agent ``i`` (leaf ``k`` of the cone)."""
    eta_i = np.asarray(eta_i, dtype=float)
    delta = _separation(eta_i, eta_j)
    R = rotation_matrix(eta_i[3], eta_i[4])
    dR_dt, dR_dp = rotation_derivatives(eta_i[3], eta_i[4])
    h, g_body = cone.value_body(R @ delta, k)
    grad = np.zeros(10)
    g_world = R.T @ g_body
    grad[:3] = -g_world
    grad[3] = g_body @ (dR_dt @ delta)
    grad[4] = g_body @ (dR_dp @ delta)
    grad[5:8] = g_world
    return h, grad


# ---------------------------------------------------------------------- range


@dataclass(frozen=True)
class RangeBand:
    r_min: float
    r_max: float

    def __post_init__(self):
        if not (self.r_max >= self.r_min > 0):
            raise ValueError("need r_max >= r_min > 0")


def range_values(band: RangeBand, eta_i, eta_j):
    """``((h_min, grad_min), (h_max, grad_max))`` for the range band."""
    delta = _separation(eta_i, eta_j)
    L = float(np.linalg.norm(delta))
    e = delta / L
    g = np.zeros(10)
    g[:3] = -e
    g[5:8] = e
    return (L - band.r_min, g), (band.r_max - L, -g)


# ---------------------------------------------------------- state / regularity


def state_value(eta, psi_max: float = PSI_MAX) -> tuple[float, np.ndarray]:
    psi = float(eta[4])
    grad = np.zeros(5)
    grad[4] = -2.0 * psi
    return psi_max**2 - psi**2, grad


def regularity_value(eta_i, eta_j, margin: float = REG_MARGIN) -> tuple[float, np.ndarray]:
    dx = float(eta_i[0] - eta_j[0])
    dy = float(eta_i[1] - eta_j[1])
    grad = np.zeros(10)
    grad[0], grad[1] = 2 * dx, 2 * dy
    grad[5], grad[6] = -2 * dx, -2 * dy
    return dx * dx + dy * dy - margin, grad


# ---------------------------------------------------------- collision / LOS


def collision_value(Pa: Polytope, Pb: Polytope, r_ca: float) -> DistanceResult:
    return min_distance(Pa, Pb, offset=r_ca)


@dataclass(frozen=True)
class LosCorridor:
    """Slim tetrahedron whose edge is the segment between two agents.

    ``mu`` controls the slimness (cross-section hypotenuse ``1/mu``);
    ``r_los`` is the clearance offset of the LOS distance.
    """

    mu: float = 100.0
    r_los: float = 0.0

    def _frame(self, p_i, p_j):
        delta = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
        rho2 = delta[0] ** 2 + delta[1] ** 2
        if rho2 <= 1e-12:
            raise RegularityError("LOS endpoints are vertically aligned")
        L = float(np.linalg.norm(delta))
        yaw = np.arctan2(delta[1], delta[0])
        pitch = -np.arctan2(delta[2], np.sqrt(rho2))
        return delta, L, pitch, yaw

    def _a0(self, L: float) -> np.ndarray:
        m = self.mu * L
        return np.array([[-1.0, 0.0, m], [1.0, 0.0, m], [0.0, -1.0, -1.0], [0.0, 1.0, -1.0]])

    def build(self, p_i, p_j) -> Polytope:
        _, L, pitch, yaw = self._frame(p_i, p_j)
        A = self._a0(L) @ rotation_matrix(pitch, yaw)
        mid = 0.5 * (np.asarray(p_i, dtype=float) + np.asarray(p_j, dtype=float))
        return Polytope(A, A @ mid + np.array([0.5, 0.5, 0.0, 0.0]) * L)

    def jacobians(self, p_i, p_j) -> tuple[np.ndarray, np.ndarray]:
        """``dA (4, 3, 6)`` and ``db (4, 6)`` with respect to ``[p_i; p_j]``."""
        delta, L, pitch, yaw = self._frame(p_i, p_j)
        dx, dy, dz = delta
        rho2 = dx * dx + dy * dy
        rho = np.sqrt(rho2)
        L2 = L * L
        dL = delta / L
        dyaw = np.array([-dy / rho2, dx / rho2, 0.0])
        dpitch = -np.array([-dz * dx / (rho * L2), -dz * dy / (rho * L2), rho / L2])
        X = rotation_matrix(pitch, yaw)
        dX_dpitch, dX_dyaw = rotation_derivatives(pitch, yaw)
        A0 = self._a0(L)
        dA0_dL = np.zeros((4, 3))
        dA0_dL[:2, 2] = self.mu
        A = A0 @ X
        dA_ddelta = np.empty((4, 3, 3))
        for k in range(3):
            dX = dX_dpitch * dpitch[k] + dX_dyaw * dyaw[k]
            dA_ddelta[:, :, k] = dA0_dL @ X * dL[k] + A0 @ dX
        dA = np.concatenate([dA_ddelta, -dA_ddelta], axis=2)
        s = np.asarray(p_i, dtype=float) + np.asarray(p_j, dtype=float)
        e = np.array([0.5, 0.5, 0.0, 0.0])
        dLdp = np.concatenate([dL, -dL])
        db = 0.5 * np.einsum("mkn,k->mn", dA, s) + 0.5 * np.hstack([A, A]) + np.outer(e, dLdp)
        return dA, db


def los_value(corridor: LosCorridor, eta_i, eta_j, Pk: Polytope) -> DistanceResult:
    """Over-approximated line-of-sight clearance between ``i``-``j`` and body ``k``."""
    P = corridor.build(np.asarray(eta_i)[:3], np.asarray(eta_j)[:3])
    return min_distance(P, Pk, offset=corridor.r_los)
