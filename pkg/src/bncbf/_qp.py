"""Thin wrapper around Clarabel for the small dense QPs used in this package."""

from __future__ import annotations

from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp

TIGHT = {"tol_feas": 1e-8, "tol_gap_rel": 1e-9, "tol_gap_abs": 1e-9}
RELAXED = {"tol_feas": 1e-6, "tol_gap_rel": 1e-7, "tol_gap_abs": 1e-7}
# Distance QPs: the optimal cost is the squared distance, so a gap
# tolerance of eps only resolves distances down to about sqrt(eps).
PRECISE = {"tol_feas": 1e-8, "tol_gap_rel": 1e-12, "tol_gap_abs": 1e-12}
# Fallbacks for badly conditioned bodies (very slim polytopes); Ruiz
# equilibration occasionally stalls the iterates on those.
LADDER = (
    PRECISE,
    TIGHT,
    {**TIGHT, "equilibrate_enable": False},
    {**RELAXED, "equilibrate_enable": False},
    {**RELAXED, "max_step_fraction": 0.9},
)

_OK = {"Solved"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}


@dataclass
class QPResult:
    x: np.ndarray
    z_ineq: np.ndarray
    y_eq: np.ndarray
    objective: float
    status: str
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status in _OK

    @property
    def infeasible(self) -> bool:
        return self.status in _INFEASIBLE


def solve_qp(
    P: np.ndarray,
    q: np.ndarray,
    G: np.ndarray | None = None,
    h: np.ndarray | None = None,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    tolerances: dict | None = None,
) -> QPResult:
    """min 1/2 x'Px + q'x  s.t.  A_eq x = b_eq,  G x <= h.

    Inequality multipliers are returned in ``z_ineq`` with the sign convention
    ``P x + q + G' z + A_eq' y = 0``, ``z >= 0``.
    """
    n = len(q)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    n_eq, n_in = A_eq.shape[0], G.shape[0]

    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if n_in:
        cones.append(clarabel.NonnegativeConeT(n_in))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    for key, value in (tolerances or TIGHT).items():
        setattr(settings, key, value)

    Pu = sp.triu(sp.csc_matrix(np.asarray(P, dtype=float)), format="csc")
    M = sp.csc_matrix(np.vstack([A_eq, G]))
    solver = clarabel.DefaultSolver(Pu, np.asarray(q, dtype=float), M, np.concatenate([b_eq, h]), cones, settings)
    sol = solver.solve()
    z = np.asarray(sol.z, dtype=float)
    return QPResult(
        x=np.asarray(sol.x, dtype=float),
        z_ineq=z[n_eq:],
        y_eq=z[:n_eq],
        objective=float(sol.obj_val),
        status=str(sol.status),
        iterations=int(sol.iterations),
    )
