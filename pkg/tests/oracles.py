"""Reference implementations that share no code with the package under test."""

from __future__ import annotations

import itertools

import numpy as np


def box_gap(lo1, hi1, lo2, hi2) -> float:
    """Distance between axis-aligned boxes: norm of the per-axis gaps."""
    g = np.maximum(0.0, np.maximum(np.asarray(lo2) - hi1, np.asarray(lo1) - hi2))
    return float(np.linalg.norm(g))


def point_box(p, lo, hi) -> float:
    return float(np.linalg.norm(np.maximum(0.0, np.maximum(lo - p, p - hi))))


def segment_box(a, b, lo, hi) -> float:
    """Exact distance from segment ``[a, b]`` to a box.

    The squared distance is piecewise quadratic in the segment parameter with
    breakpoints where a coordinate crosses a box face; each piece is
    minimized in closed form.
    """
    a, b, lo, hi = (np.asarray(x, dtype=float) for x in (a, b, lo, hi))
    d = b - a
    cuts = {0.0, 1.0}
    for k in range(3):
        if d[k] != 0.0:
            for face in (lo[k], hi[k]):
                s = (face - a[k]) / d[k]
                if 0.0 < s < 1.0:
                    cuts.add(s)
    cuts = sorted(cuts)
    best = min(point_box(a, lo, hi), point_box(b, lo, hi))
    for s0, s1 in zip(cuts[:-1], cuts[1:]):
        mid = a + 0.5 * (s0 + s1) * d
        # on this piece each coordinate is either below, inside or above the box
        target = np.where(mid < lo, lo, np.where(mid > hi, hi, np.nan))
        act = ~np.isnan(target)
        if not act.any():
            return 0.0
        # minimize sum_k (a_k + s d_k - target_k)^2 over active k
        num = -np.sum((a[act] - target[act]) * d[act])
        den = np.sum(d[act] ** 2)
        s = s0 if den == 0.0 else float(np.clip(num / den, s0, s1))
        best = min(best, point_box(a + s * d, lo, hi))
    return best


def _hull_faces(V: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangular facets of a tetrahedron given its 4 vertices."""
    assert V.shape == (4, 3)
    return list(itertools.combinations(range(4), 3))


def _edges(V):
    return [V[j] - V[i] for i, j in itertools.combinations(range(4), 2)]


def _face_normals(V):
    return [np.cross(V[b] - V[a], V[c] - V[a]) for a, b, c in _hull_faces(V)]


def tetra_overlap(Va: np.ndarray, Vb: np.ndarray) -> bool:
    """Separating-axis test: face normals of both bodies and all edge-edge crosses."""
    axes = _face_normals(Va) + _face_normals(Vb)
    axes += [np.cross(e, f) for e in _edges(Va) for f in _edges(Vb)]
    for n in axes:
        if np.linalg.norm(n) < 1e-12:
            continue
        pa, pb = Va @ n, Vb @ n
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def _to_simplex(w: np.ndarray) -> np.ndarray:
    """Map barycentric pairs ``(w1, w2)`` into the triangle ``w1, w2 >= 0, w1 + w2 <= 1``."""
    w = np.clip(w, 0.0, 1.0)
    s = w.sum(axis=-1, keepdims=True)
    return np.where(s > 1.0, w / np.maximum(s, 1e-300), w)


def _tri_points(tri: np.ndarray, w: np.ndarray) -> np.ndarray:
    return tri[0] + w[..., :1] * (tri[1] - tri[0]) + w[..., 1:] * (tri[2] - tri[0])


def _triangle_pair(A: np.ndarray, B: np.ndarray, m: int, iters: int, shrink: float) -> float:
    # the distance is jointly convex in the two barycentric pairs, so a
    # shrinking sample window around the best sample homes in on the minimum
    center = np.full(4, 0.5)
    r = 0.5
    best = np.inf
    for _ in range(iters):
        axes = [np.linspace(c - r, c + r, m) for c in center]
        W = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
        wa, wb = _to_simplex(W[:, :2]), _to_simplex(W[:, 2:])
        d = np.linalg.norm(_tri_points(A, wa) - _tri_points(B, wb), axis=1)
        k = int(np.argmin(d))
        if d[k] <= best:
            best = float(d[k])
            center = np.concatenate([wa[k], wb[k]])
        r *= shrink
    return best


def sampled_distance(Va: np.ndarray, Vb: np.ndarray, m: int = 7, iters: int = 30, shrink: float = 0.55) -> float:
    """Adaptive dense-sampling distance between two tetrahedra.

    Overlapping bodies (separating-axis test) give 0. Otherwise each pair of
    faces is sampled on a grid in barycentric coordinates that is recentred
    on the best sample and shrunk ``iters`` times. Every sample is a real
    surface point, so the result never underestimates the distance.
    """
    if tetra_overlap(Va, Vb):
        return 0.0
    fa = [Va[list(f)] for f in _hull_faces(Va)]
    fb = [Vb[list(f)] for f in _hull_faces(Vb)]
    return min(_triangle_pair(A, B, m, iters, shrink) for A in fa for B in fb)


# ----------------------------------------------------------- Boolean trees


def brute_eval(expr, values) -> float:
    """Direct recursion on the nested-array form."""
    op = expr[0]
    if op == "leaf":
        return values[expr[1]]
    if op == "not":
        return -brute_eval(expr[1], values)
    vals = [brute_eval(e, values) for e in expr[1:]]
    return min(vals) if op == "and" else max(vals)


def random_expr(rng, names, depth: int):
    if depth == 0 or rng.random() < 0.25:
        return ["leaf", names[rng.integers(len(names))]]
    op = ["and", "or", "not"][rng.integers(3)]
    if op == "not":
        return ["not", random_expr(rng, names, depth - 1)]
    k = int(rng.integers(1, 4))
    return [op, *(random_expr(rng, names, depth - 1) for _ in range(k))]


def expr_depth(expr) -> int:
    if expr[0] == "leaf":
        return 0
    return 1 + max(expr_depth(e) for e in expr[1:])


# ----------------------------------------------------------- calculus


def central_diff(f, x, h: float = 1e-6) -> np.ndarray:
    """Central differences; for vector-valued ``f`` the last axis indexes ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def projection_oracle(u_ref, G, c):
    """argmin ||u - u_ref||^2 s.t. G u + c >= 0, by enumerating active sets."""
    u_ref = np.asarray(u_ref, dtype=float)
    m = len(c)
    best, best_cost = None, np.inf
    for r in range(m + 1):
        for S in itertools.combinations(range(m), r):
            S = list(S)
            if S:
                A = G[S]
                rhs = -(A @ u_ref + c[S])
                try:
                    lam = np.linalg.lstsq(A @ A.T, rhs, rcond=None)[0]
                except np.linalg.LinAlgError:
                    continue
                if np.any(lam < -1e-12):
                    continue
                u = u_ref + A.T @ lam
            else:
                u = u_ref.copy()
            if np.all(G @ u + c >= -1e-9):
                cost = float(np.sum((u - u_ref) ** 2))
                if cost < best_cost:
                    best, best_cost = u, cost
    return best
