"""Compare the dual-derivative lower bound with the finite-difference rate
of the minimum distance along random two-body trajectories.

    python scripts/check_lower_bound.py [--trajectories 10] [--seed 0]

Prints, per trajectory, the worst normalized gap (g - hdot) / (1 + |hdot|)
and its median. The bound is sound when the gaps stay at the level of
finite-difference noise; a gap of order one would mean it is not.
"""

import argparse

import numpy as np

from bncbf.distance import derivative_bound_terms, min_distance
from bncbf.dynamics import step
from bncbf.filter import NU_BOUND
from bncbf.geometry import instantiate, tetrahedron_template


def trajectory(rng, tpl, dt=1e-3, n=1000):
    while True:
        pa = np.r_[rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.5, 0.5), rng.uniform(-3, 3)]
        pb = np.r_[0.9 + rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3, 2),
                   rng.uniform(-0.5, 0.5), rng.uniform(-3, 3)]
        if min_distance(instantiate(tpl, pa), instantiate(tpl, pb)).distance > 0.2:
            break
    u = rng.uniform(-0.3, 0.3, 10)
    A, B = [pa], [pb]
    for _ in range(n + 1):
        A.append(step(A[-1], u[:5], dt))
        B.append(step(B[-1], u[5:], dt))
    return A, B, u


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trajectories", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eps2", type=float, default=0.01)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    tpl = tetrahedron_template(2.0)
    dt = 1e-3
    for t in range(args.trajectories):
        A, B, u = trajectory(rng, tpl, dt)
        R = [min_distance(instantiate(tpl, a), instantiate(tpl, b)) for a, b in zip(A, B)]
        sup = [r.support(1e-6) for r in R]
        gaps = []
        for k in range(1, len(R) - 1):
            if not (sup[k - 1] == sup[k] == sup[k + 1]) or R[k].distance < 1e-3:
                continue
            hdot = (R[k + 1].h - R[k - 1].h) / (2 * dt)
            g = derivative_bound_terms(tpl, tpl, A[k], B[k], R[k], args.eps2).lower_bound(u, NU_BOUND)
            gaps.append((g - hdot) / (1 + abs(hdot)))
        gaps = np.array(gaps)
        print(f"trajectory {t}: {gaps.size} samples, worst gap {gaps.max():+.2e}, "
              f"median {np.median(gaps):+.2e}, h range [{min(r.h for r in R):.3f}, {max(r.h for r in R):.3f}]")


if __name__ == "__main__":
    main()
