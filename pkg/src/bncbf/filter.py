"""Safety filter QP over the almost-active leaves of a composed barrier.

Decision vector ``z = [u; nu_1a; nu_1b; nu_2a; ...]`` where ``u`` is the
stacked agent input and ``nu_j*`` are the multiplier rates of the j-th active
distance leaf. The problem is

    min  (u - u_r)' Q (u - u_r)
    s.t. s_i grad_i' u              >= -alpha(h_g)   (active smooth leaves)
         Ldot_j(u, nu_ja, nu_jb)    >= -alpha(h_g)   (active distance leaves)
         eq_j(u, nu_ja, nu_jb)       = 0
         nu_j >= 0 on almost-inactive hyperplanes
         lb <= u <= ub
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from ._qp import RELAXED, TIGHT, solve_qp
from .composition import ActiveSets
from .distance import DerivativeBoundTerms

FEAS_TOL = 1e-6
# Multiplier rates have no cost and can have recession directions of zero
# slope; a wide box keeps the interior-point iterates bounded. It can only
# shrink the feasible set, never admit an unsafe input.
NU_BOUND = 1e3


class FilterError(RuntimeError):
    pass


class FilterInfeasibleError(FilterError):
    def __init__(self, status: str):
        super().__init__(f"safety filter QP failed: {status}")
        self.status = status


class StaleCacheError(FilterError):
    pass


@dataclass(frozen=True)
class LinearAlpha:
    """Extended class-K function ``alpha(s) = slope * s``."""

    slope: float = 0.2

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("alpha slope must be positive")

    def __call__(self, s: float) -> float:
        return self.slope * s


@dataclass(frozen=True, eq=False)
class SmoothRow:
    leaf_id: str
    grad_u: np.ndarray  # sign-adjusted d h / d u
    drift: float = 0.0  # sign-adjusted <grad h, f(x)>


@dataclass(frozen=True, eq=False)
class DistanceBlock:
    leaf_id: str
    terms: DerivativeBoundTerms  # expressed in u


@dataclass(eq=False)
class FilterProblem:
    u_ref: np.ndarray
    h_g: float
    smooth: list = field(default_factory=list)
    distance: list = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    Q: np.ndarray | None = None
    alpha: Callable[[float], float] = field(default_factory=LinearAlpha)
    nu_bound: float = NU_BOUND

    def __post_init__(self):
        n = self.u_ref.shape[0]
        self.u_ref = np.asarray(self.u_ref, dtype=float)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        self.Q = np.eye(n) if self.Q is None else np.asarray(self.Q, dtype=float)
        if self.Q.shape != (n, n) or not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be a symmetric n_u x n_u matrix")
        try:
            np.linalg.cholesky(self.Q)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Q must be positive definite") from exc

    @property
    def n_u(self) -> int:
        return self.u_ref.shape[0]

    @property
    def n_rows(self) -> int:
        """Barrier rows (excluding equalities, signs and box)."""
        return len(self.smooth) + len(self.distance)

    def _offsets(self) -> list[int]:
        offs, k = [], self.n_u
        for blk in self.distance:
            offs.append(k)
            k += blk.terms.cost_la.size + blk.terms.cost_lb.size
        offs.append(k)
        return offs

    @property
    def n_vars(self) -> int:
        return self._offsets()[-1]

    def matrices(self):
        """``(P, q, G, h, A_eq, b_eq)`` in ``1/2 z'Pz + q'z`` form."""
        n, nz = self.n_u, self.n_vars
        offs = self._offsets()
        P = np.zeros((nz, nz))
        P[:n, :n] = 2.0 * self.Q
        q = np.zeros(nz)
        q[:n] = -2.0 * self.Q @ self.u_ref
        rhs = self.alpha(self.h_g)
        G_rows, h_rows, E_rows, e_rows = [], [], [], []
        for row in self.smooth:
            g = np.zeros(nz)
            g[:n] = -row.grad_u
            G_rows.append(g)
            h_rows.append(rhs + row.drift)
        for blk, off in zip(self.distance, offs):
            t = blk.terms
            ma = t.cost_la.size
            g = np.zeros(nz)
            g[:n] = -t.cost_rate
            g[off : off + ma] = -t.cost_la
            g[off + ma : off + ma + t.cost_lb.size] = -t.cost_lb
            G_rows.append(g)
            h_rows.append(rhs)
            E = np.zeros((3, nz))
            E[:, :n] = t.eq_rate
            E[:, off : off + ma] = t.eq_la
            E[:, off + ma : off + ma + t.cost_lb.size] = t.eq_lb
            E_rows.extend(E)
            e_rows.extend([0.0, 0.0, 0.0])
            signed = {int(k) for k in t.sign_a} | {ma + int(k) for k in t.sign_b}
            for k in range(ma + t.cost_lb.size):
                r = np.zeros(nz)
                r[off + k] = -1.0
                G_rows.append(r)
                h_rows.append(0.0 if k in signed else self.nu_bound)
                r = np.zeros(nz)
                r[off + k] = 1.0
                G_rows.append(r)
                h_rows.append(self.nu_bound)
        for k in range(n):
            if self.lb[k] == self.ub[k]:
                E = np.zeros(nz)
                E[k] = 1.0
                E_rows.append(E)
                e_rows.append(self.lb[k])
                continue
            if np.isfinite(self.ub[k]):
                r = np.zeros(nz)
                r[k] = 1.0
                G_rows.append(r)
                h_rows.append(self.ub[k])
            if np.isfinite(self.lb[k]):
                r = np.zeros(nz)
                r[k] = -1.0
                G_rows.append(r)
                h_rows.append(-self.lb[k])
        G = np.array(G_rows).reshape(-1, nz)
        E = np.array(E_rows).reshape(-1, nz)
        return P, q, G, np.array(h_rows), E, np.array(e_rows)

    def residuals(self, u: np.ndarray, nus: list[np.ndarray]) -> np.ndarray:
        """Constraint slacks (>= 0 when satisfied); equalities enter as ``-|r|``."""
        rhs = self.alpha(self.h_g)
        out = [s.grad_u @ u + s.drift + rhs for s in self.smooth]
        for blk, nu in zip(self.distance, nus):
            t = blk.terms
            ma = t.cost_la.size
            na, nb = nu[:ma], nu[ma:]
            out.append(t.ldot(u, na, nb) + rhs)
            out.extend(-np.abs(t.eq_residual(u, na, nb)))
            out.extend(na[t.sign_a])
            out.extend(nb[t.sign_b])
        return np.array(out, dtype=float)


@dataclass(eq=False)
class FilterSolution:
    u_safe: np.ndarray
    lambda_dots: dict
    objective: float
    status: str
    residuals: np.ndarray

    @property
    def max_violation(self) -> float:
        return float(max(0.0, -np.min(self.residuals))) if self.residuals.size else 0.0


def _pass_through(problem: FilterProblem) -> FilterSolution | None:
    """``u_ref`` itself when it satisfies every row, else ``None``.

    A feasible reference is its own projection. Checking it directly returns
    it exactly, where the interior-point solve would only pin it to about the
    square root of the gap tolerance (the optimal cost is zero).
    """
    u = problem.u_ref
    if np.any(u < problem.lb) or np.any(u > problem.ub):
        return None
    rhs = problem.alpha(problem.h_g)
    if any(s.grad_u @ u + s.drift + rhs < 0.0 for s in problem.smooth):
        return None
    nus = []
    for blk in problem.distance:
        g, na, nb = blk.terms.best_rates(u, problem.nu_bound)
        if not g + rhs >= 0.0 or na is None:
            return None
        nus.append(np.concatenate([na, nb]))
    return FilterSolution(
        u_safe=u.copy(),
        lambda_dots={blk.leaf_id: nu for blk, nu in zip(problem.distance, nus)},
        objective=0.0,
        status="PassThrough",
        residuals=problem.residuals(u, nus),
    )


def solve(problem: FilterProblem) -> FilterSolution:
    """Project ``u_ref`` onto the certified set.

    A feasible reference is returned unchanged; otherwise the QP is solved,
    with one retry at relaxed tolerances on numerical trouble.

    Raises:
        FilterInfeasibleError: infeasible problem or repeated solver failure.
    """
    passed = _pass_through(problem)
    if passed is not None:
        return passed
    P, q, G, h, E, e = problem.matrices()
    res = solve_qp(P, q, G, h, E, e, tolerances=TIGHT)
    if not res.ok and not res.infeasible:
        res = solve_qp(P, q, G, h, E, e, tolerances=RELAXED)
        if res.status not in ("Solved", "AlmostSolved"):
            raise FilterInfeasibleError(res.status)
    elif res.infeasible:
        raise FilterInfeasibleError(res.status)
    n = problem.n_u
    u = np.clip(res.x[:n], problem.lb, problem.ub)
    offs = problem._offsets()
    nus = [res.x[offs[k] : offs[k + 1]] for k in range(len(problem.distance))]
    du = u - problem.u_ref
    return FilterSolution(
        u_safe=u,
        lambda_dots={blk.leaf_id: nu for blk, nu in zip(problem.distance, nus)},
        objective=float(du @ problem.Q @ du),
        status=res.status,
        residuals=problem.residuals(u, nus),
    )


class StepEvaluation(Protocol):
    """What :func:`assemble` needs from one evaluation pass over the leaves."""

    state_key: bytes
    h_g: float
    active: ActiveSets

    def smooth_row(self, leaf_id: str, sign: int) -> SmoothRow: ...

    def distance_block(self, leaf_id: str, eps2: float) -> DistanceBlock: ...


def state_key(state) -> bytes:
    return np.ascontiguousarray(state, dtype=float).tobytes()


def assemble(
    state,
    evaluation: StepEvaluation,
    u_ref,
    lb,
    ub,
    eps2: float = 0.01,
    alpha: Callable[[float], float] | None = None,
    Q=None,
) -> FilterProblem:
    """Build the filter QP for the active leaves of ``evaluation``.

    Raises:
        StaleCacheError: if ``evaluation`` was computed at a different state.
    """
    if evaluation.state_key != state_key(state):
        raise StaleCacheError("leaf evaluation does not match the current state")
    active = evaluation.active
    smooth = [evaluation.smooth_row(i, s) for i, s in sorted(active.smooth.items())]
    dist = []
    for leaf_id, sign in sorted(active.nonsmooth.items()):
        if sign < 0:
            raise FilterError(f"distance leaf {leaf_id!r} is negated")
        dist.append(evaluation.distance_block(leaf_id, eps2))
    return FilterProblem(
        u_ref=np.asarray(u_ref, dtype=float),
        h_g=evaluation.h_g,
        smooth=smooth,
        distance=dist,
        lb=lb,
        ub=ub,
        Q=Q,
        alpha=alpha or LinearAlpha(),
    )


@dataclass(frozen=True)
class DecreaseReport:
    h_now: float
    h_next: float
    lower: float
    passed: bool


def verify_decrease(
    h_of: Callable[[np.ndarray], float],
    advance: Callable[[np.ndarray, np.ndarray, float], np.ndarray],
    state,
    u_safe,
    dt: float,
    alpha: Callable[[float], float] | None = None,
    tol: float = 1e-6,
) -> DecreaseReport:
    """One-step lookahead check ``h_g(next) >= h_g(now) - alpha(h_g(now)) dt - tol``."""
    alpha = alpha or LinearAlpha()
    h_now = float(h_of(state))
    h_next = float(h_of(advance(state, u_safe, dt)))
    lower = h_now - alpha(h_now) * dt - tol
    return DecreaseReport(h_now, h_next, lower, h_next >= lower)
