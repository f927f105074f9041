"""Minimum distance between two polytopes, its dual multipliers, and the
dual-based affine lower bound on the distance rate.

The distance is obtained from the smooth QP ``min |p - p'|^2`` over
``p in Pa, p' in Pb``. Its multipliers ``mu`` are rescaled by ``1/(2 d)`` so
that, for separated bodies,

    lambda_a A_a + lambda_b A_b = 0,   |A_a' lambda_a| = 1,
    -lambda_a b_a - lambda_b b_b = d.

With ``nu`` standing for the (free) rate of the multipliers, the rate of the
dual objective in distance units is

    Ldot = -d lambda_a A_a A_a' nu_a - d lambda_a A_a Adot_a' lambda_a
           - nu_a b_a - nu_b b_b - lambda_a bdot_a - lambda_b bdot_b,

subject to ``nu_a A_a + lambda_a Adot_a + nu_b A_b + lambda_b Adot_b = 0`` and
``nu >= 0`` on the almost-inactive hyperplanes. Its maximum over ``nu`` is a
lower bound on ``d'(t)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ._qp import LADDER, solve_qp
from .geometry import Polytope, PolytopeTemplate, pose_jacobians

DIST_EPS = 1e-9

_P_DIST = 2.0 * np.block([[np.eye(3), -np.eye(3)], [-np.eye(3), np.eye(3)]])


class DistanceSolveError(RuntimeError):
    def __init__(self, status: str):
        super().__init__(f"minimum-distance QP failed with status {status}")
        self.status = status


@dataclass(frozen=True, eq=False)
class DistanceResult:
    """Outcome of :func:`min_distance`; ``h = distance - offset``."""

    h: float
    distance: float
    offset: float
    witness_a: np.ndarray
    witness_b: np.ndarray
    lambda_a: np.ndarray
    lambda_b: np.ndarray
    Pa: Polytope
    Pb: Polytope
    status: str = "Solved"

    @property
    def normalized(self) -> bool:
        """True when the multipliers carry the distance (not squared) scaling."""
        return self.distance > DIST_EPS

    def active_eps_set(self, eps2: float) -> set[tuple[int, int]]:
        return active_dual_set(self, eps2)

    def dual_objective(self) -> float:
        return float(-self.lambda_a @ self.Pa.b - self.lambda_b @ self.Pb.b)

    def stationarity_residual(self) -> float:
        return float(np.max(np.abs(self.lambda_a @ self.Pa.A + self.lambda_b @ self.Pb.A)))

    def support(self, tol: float = 1e-6) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Indices of multipliers above ``tol`` (the active hyperplane pattern)."""
        return (
            tuple(np.flatnonzero(self.lambda_a > tol)),
            tuple(np.flatnonzero(self.lambda_b > tol)),
        )


def min_distance(Pa: Polytope, Pb: Polytope, offset: float = 0.0) -> DistanceResult:
    """Minimum Euclidean distance between ``Pa`` and ``Pb`` minus ``offset``.

    Overlapping bodies give ``h = -offset`` and coincident witnesses.

    Raises:
        DistanceSolveError: if every solver setting in the fallback ladder fails.
    """
    ma = Pa.n_faces
    G = np.zeros((ma + Pb.n_faces, 6))
    G[:ma, :3] = Pa.A
    G[ma:, 3:] = Pb.A
    h = np.concatenate([Pa.b, Pb.b])
    # unit-norm rows keep slim bodies well conditioned; multipliers map back below
    scale = np.linalg.norm(G, axis=1)
    G, h = G / scale[:, None], h / scale
    for tol in LADDER:
        res = solve_qp(_P_DIST, np.zeros(6), G, h, tolerances=tol)
        if res.ok:
            break
    else:
        if res.status != "AlmostSolved":
            raise DistanceSolveError(res.status)
    wa, wb = res.x[:3].copy(), res.x[3:].copy()
    dist = float(np.linalg.norm(wa - wb))
    mu = np.maximum(res.z_ineq, 0.0) / scale
    lam = mu / (2.0 * dist) if dist > DIST_EPS else mu
    return DistanceResult(
        h=dist - offset,
        distance=dist,
        offset=float(offset),
        witness_a=wa,
        witness_b=wb,
        lambda_a=lam[:ma],
        lambda_b=lam[ma:],
        Pa=Pa,
        Pb=Pb,
        status=res.status,
    )


def active_dual_set(result: DistanceResult, eps2: float) -> set[tuple[int, int]]:
    """Pairs ``(k_a, k_b)`` whose multipliers are both ``<= eps2`` (0-indexed)."""
    ka = np.flatnonzero(result.lambda_a <= eps2)
    kb = np.flatnonzero(result.lambda_b <= eps2)
    return {(int(i), int(j)) for i in ka for j in kb}


def _sign_indices(result: DistanceResult, eps2: float) -> tuple[np.ndarray, np.ndarray]:
    pairs = active_dual_set(result, eps2)
    sa = np.array(sorted({i for i, _ in pairs}), dtype=int)
    sb = np.array(sorted({j for _, j in pairs}), dtype=int)
    return sa, sb


@dataclass(frozen=True, eq=False)
class DerivativeBoundTerms:
    """Affine pieces of ``Ldot(rate, nu_a, nu_b)`` and its equality block.

    ``rate`` is whatever vector the body motions were differentiated against
    (pose rates, or inputs after :meth:`compose`).
    """

    cost_rate: np.ndarray  # (n,)
    cost_la: np.ndarray  # (ma,)
    cost_lb: np.ndarray  # (mb,)
    eq_rate: np.ndarray  # (3, n)
    eq_la: np.ndarray  # (3, ma)
    eq_lb: np.ndarray  # (3, mb)
    sign_a: np.ndarray
    sign_b: np.ndarray
    h: float

    @property
    def n_rate(self) -> int:
        return self.cost_rate.shape[0]

    def ldot(self, rate, nu_a, nu_b) -> float:
        return float(self.cost_rate @ rate + self.cost_la @ nu_a + self.cost_lb @ nu_b)

    def eq_residual(self, rate, nu_a, nu_b) -> np.ndarray:
        return self.eq_rate @ rate + self.eq_la @ nu_a + self.eq_lb @ nu_b

    def compose(self, M: np.ndarray) -> "DerivativeBoundTerms":
        """Re-express the terms for ``rate = M @ u``."""
        return DerivativeBoundTerms(
            cost_rate=self.cost_rate @ M,
            cost_la=self.cost_la,
            cost_lb=self.cost_lb,
            eq_rate=self.eq_rate @ M,
            eq_la=self.eq_la,
            eq_lb=self.eq_lb,
            sign_a=self.sign_a,
            sign_b=self.sign_b,
            h=self.h,
        )

    def best_rates(self, rate, nu_bound: float | None = None):
        """Maximize ``Ldot`` over the multiplier rates: ``(g, nu_a, nu_b)``.

        ``nu_bound`` boxes the rates as the filter does; without it solver
        noise in the cost along null-space directions can make the LP
        unbounded. ``g`` is ``+inf`` for an unbounded LP and ``-inf`` for an
        infeasible one (rates are ``None`` then).
        """
        rate = np.asarray(rate, dtype=float)
        ma, mb = self.cost_la.size, self.cost_lb.size
        box = None if nu_bound is None else float(nu_bound)
        bounds = [(None if box is None else -box, box)] * (ma + mb)
        for k in self.sign_a:
            bounds[k] = (0.0, box)
        for k in self.sign_b:
            bounds[ma + k] = (0.0, box)
        res = linprog(
            c=-np.concatenate([self.cost_la, self.cost_lb]),
            A_eq=np.hstack([self.eq_la, self.eq_lb]),
            b_eq=-(self.eq_rate @ rate),
            bounds=bounds,
            method="highs",
        )
        if res.status == 3:
            return float("inf"), None, None
        if res.status != 0:
            return float("-inf"), None, None
        return float(-res.fun + self.cost_rate @ rate), res.x[:ma], res.x[ma:]

    def lower_bound(self, rate, nu_bound: float | None = None) -> float:
        """``g = max_nu Ldot`` subject to the equality and sign constraints."""
        return self.best_rates(rate, nu_bound)[0]


def derivative_terms(
    result: DistanceResult,
    dA_a: np.ndarray,
    db_a: np.ndarray,
    dA_b: np.ndarray,
    db_b: np.ndarray,
    eps2: float,
) -> DerivativeBoundTerms:
    """Bound terms given body sensitivities ``dA (m, 3, n)``, ``db (m, n)``.

    Both bodies must be differentiated against the same rate vector of
    length ``n``; static bodies pass zero arrays.
    """
    Aa, ba = result.Pa.A, result.Pa.b
    Ab, bb = result.Pb.A, result.Pb.b
    la, lb = result.lambda_a, result.lambda_b
    # the squared-distance Lagrangian has weight 1/2 on its quadratic term
    scale = result.distance if result.normalized else 0.5
    nvec = Aa.T @ la
    dAa_t_la = np.einsum("mkn,m->kn", dA_a, la)  # (3, n): column n is dA_a[:,:,n]' la
    dAb_t_lb = np.einsum("mkn,m->kn", dA_b, lb)
    cost_rate = -scale * (nvec @ dAa_t_la) - la @ db_a - lb @ db_b
    sa, sb = _sign_indices(result, eps2)
    return DerivativeBoundTerms(
        cost_rate=cost_rate,
        cost_la=-scale * (Aa @ nvec) - ba,
        cost_lb=-bb.copy(),
        eq_rate=dAa_t_la + dAb_t_lb,
        eq_la=Aa.T.copy(),
        eq_lb=Ab.T.copy(),
        sign_a=sa,
        sign_b=sb,
        h=result.h,
    )


def derivative_bound_terms(
    template_a: PolytopeTemplate,
    template_b: PolytopeTemplate,
    pose_a,
    pose_b,
    result: DistanceResult,
    eps2: float,
) -> DerivativeBoundTerms:
    """Bound terms for two kinematic agents, in their stacked inputs ``[nu_a; nu_b]``."""
    from .dynamics import jacobian

    dA_a, db_a = pose_jacobians(template_a, pose_a)
    dA_b, db_b = pose_jacobians(template_b, pose_b)
    ma, mb = dA_a.shape[0], dA_b.shape[0]
    # rate vector is [eta_a_dot; eta_b_dot]
    DA = np.zeros((ma, 3, 10))
    DA[:, :, :5] = dA_a
    DB = np.zeros((mb, 3, 10))
    DB[:, :, 5:] = dA_b
    dba = np.zeros((ma, 10))
    dba[:, :5] = db_a
    dbb = np.zeros((mb, 10))
    dbb[:, 5:] = db_b
    terms = derivative_terms(result, DA, dba, DB, dbb, eps2)
    M = np.zeros((10, 10))
    M[:5, :5] = jacobian(pose_a)
    M[5:, 5:] = jacobian(pose_b)
    return terms.compose(M)
