"""Half-space polytopes, pitch/yaw rotations and pose-dependent instantiation.

Conventions used throughout the package:

* ``rotation_matrix(theta, psi)`` returns ``R``, the world-to-body rotation.
  Its transpose ``R.T = Rz(psi) @ Ry(theta)`` is the body-to-world rotation.
* A body-frame template ``{q | A0 q <= b0}`` placed at pose ``eta`` becomes
  ``{p | A0 R (p - pos) <= b0}``, i.e. ``A = A0 R`` and ``b = b0 + A pos``.
* Poses are ``eta = [x, y, z, theta, psi]`` (metres, radians).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

MEMBERSHIP_TOL = 1e-9
COS_EPS = 1e-9


class GeometryError(ValueError):
    """Base class for invalid geometric input."""


class DomainError(GeometryError):
    """Pitch angle too close to +-pi/2 for the Euler-angle parametrisation."""


class EmptyPolytopeError(GeometryError):
    """The half-space system has no (interior) point."""


def _check_pitch(theta: float) -> None:
    if abs(np.cos(theta)) < COS_EPS:
        raise DomainError(f"pitch {theta!r} makes cos(theta) vanish")


def body_to_world(theta: float, psi: float) -> np.ndarray:
    """``Rz(psi) @ Ry(theta)``; columns are the body axes in world coordinates."""
    _check_pitch(theta)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.array(
        [
            [cp * ct, -sp, cp * st],
            [sp * ct, cp, st * sp],
            [-st, 0.0, ct],
        ]
    )


def rotation_matrix(theta: float, psi: float) -> np.ndarray:
    """World-to-body rotation ``R(theta, psi)`` (roll ignored).

    Raises:
        DomainError: if ``|cos(theta)| < 1e-9``.
    """
    return body_to_world(theta, psi).T


def rotation_derivatives(theta: float, psi: float) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives ``(dR/dtheta, dR/dpsi)`` of :func:`rotation_matrix`."""
    _check_pitch(theta)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    dm_dtheta = np.array(
        [
            [-cp * st, 0.0, cp * ct],
            [-sp * st, 0.0, sp * ct],
            [-ct, 0.0, -st],
        ]
    )
    dm_dpsi = np.array(
        [
            [-sp * ct, -cp, -sp * st],
            [cp * ct, -sp, cp * st],
            [0.0, 0.0, 0.0],
        ]
    )
    return dm_dtheta.T, dm_dpsi.T


@dataclass(frozen=True)
class Rotation:
    theta: float
    psi: float

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.theta, self.psi)


@dataclass(frozen=True, eq=False)
class Polytope:
    """``{p in R^3 | A p <= b}`` with rows as outward normals (world frame)."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise GeometryError(f"A {A.shape} and b {b.shape} are inconsistent")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    def contains(self, p, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.all(self.A @ np.asarray(p, dtype=float) <= self.b + tol))

    def vertices(self, tol: float = 1e-9) -> np.ndarray:
        return enumerate_vertices(self.A, self.b, tol)

    def translated(self, t) -> "Polytope":
        return Polytope(self.A, self.b + self.A @ np.asarray(t, dtype=float))


def enumerate_vertices(A: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """All vertices by intersecting every 3-subset of hyperplanes.

    Only meant for small bodies (a handful of faces); duplicates produced by
    degenerate vertices are merged.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    found: list[np.ndarray] = []
    for rows in itertools.combinations(range(A.shape[0]), 3):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ v <= b + tol) and not any(np.allclose(v, w, atol=1e-9) for w in found):
            found.append(v)
    return np.array(found).reshape(-1, 3)


def active_rows(A: np.ndarray, b: np.ndarray, v: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    return np.flatnonzero(np.abs(A @ v - b) <= tol)


def chebyshev_center(P: Polytope) -> tuple[np.ndarray, float]:
    """Centre and radius of the largest ball inscribed in ``P``.

    Raises:
        EmptyPolytopeError: if the half-spaces are inconsistent.
    """
    A, b = P.A, P.b
    if A.shape[1] != 3 or A.shape[0] < 4:
        raise GeometryError("need at least 4 half-spaces in 3-D")
    norms = np.linalg.norm(A, axis=1)
    # variables (c, r): max r  s.t.  A c + r |a_i| <= b, r >= 0
    res = linprog(
        c=[0.0, 0.0, 0.0, -1.0],
        A_ub=np.hstack([A, norms[:, None]]),
        b_ub=b,
        bounds=[(None, None)] * 3 + [(0.0, None)],
        method="highs",
    )
    if res.status == 2:
        raise EmptyPolytopeError("half-space system is infeasible")
    if res.status == 3:
        return np.full(3, np.nan), float("inf")
    if res.status != 0:
        raise GeometryError(f"Chebyshev LP failed: {res.message}")
    return res.x[:3], float(res.x[3])


def is_bounded(P: Polytope) -> bool:
    for k in range(3):
        for sign in (1.0, -1.0):
            c = np.zeros(3)
            c[k] = -sign
            res = linprog(c, A_ub=P.A, b_ub=P.b, bounds=[(None, None)] * 3, method="highs")
            if res.status == 3:
                return False
    return True


@dataclass(frozen=True, eq=False)
class PolytopeTemplate:
    """Body-frame polytope ``{q | A0 q <= b0}`` carried rigidly by an agent."""

    A0: np.ndarray
    b0: np.ndarray
    name: str = "custom"
    _vertices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A0 = np.asarray(self.A0, dtype=float)
        b0 = np.asarray(self.b0, dtype=float).reshape(-1)
        if A0.ndim != 2 or A0.shape != (b0.shape[0], 3):
            raise GeometryError(f"template A0 {A0.shape} / b0 {b0.shape} mismatch")
        A0.setflags(write=False)
        b0.setflags(write=False)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "_vertices", enumerate_vertices(A0, b0))

    @property
    def body(self) -> Polytope:
        return Polytope(self.A0, self.b0)

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Vertex centroid and the radius that covers every vertex."""
        c = self._vertices.mean(axis=0)
        return c, float(np.max(np.linalg.norm(self._vertices - c, axis=1)))

    def validate(self) -> None:
        """Check boundedness, nonempty interior and simple vertices.

        Raises:
            GeometryError: describing the first violated property.
        """
        P = self.body
        _, radius = chebyshev_center(P)
        if not is_bounded(P):
            raise GeometryError(f"template {self.name!r} is unbounded")
        if not radius > 0.0:
            raise EmptyPolytopeError(f"template {self.name!r} has empty interior")
        if len(self._vertices) < 4:
            raise GeometryError(f"template {self.name!r} has fewer than 4 vertices")
        for v in self._vertices:
            rows = active_rows(self.A0, self.b0, v)
            if len(rows) != 3 or np.linalg.matrix_rank(self.A0[rows]) != 3:
                raise GeometryError(
                    f"template {self.name!r}: vertex {v} has {len(rows)} active faces"
                )


def instantiate(template: PolytopeTemplate, pose) -> Polytope:
    """Place ``template`` at ``pose``: ``A = A0 R``, ``b = b0 + A p``."""
    eta = np.asarray(pose, dtype=float)
    A = template.A0 @ rotation_matrix(eta[3], eta[4])
    return Polytope(A, template.b0 + A @ eta[:3])


def pose_jacobians(template: PolytopeTemplate, pose) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the instantiated ``(A, b)`` with respect to the pose.

    Returns:
        ``dA`` of shape ``(m, 3, 5)`` and ``db`` of shape ``(m, 5)``, indexed
        by pose component ``[x, y, z, theta, psi]``.
    """
    eta = np.asarray(pose, dtype=float)
    p = eta[:3]
    R = rotation_matrix(eta[3], eta[4])
    dR_dtheta, dR_dpsi = rotation_derivatives(eta[3], eta[4])
    A = template.A0 @ R
    m = A.shape[0]
    dA = np.zeros((m, 3, 5))
    dA[:, :, 3] = template.A0 @ dR_dtheta
    dA[:, :, 4] = template.A0 @ dR_dpsi
    db = np.zeros((m, 5))
    db[:, :3] = A
    db[:, 3] = dA[:, :, 3] @ p
    db[:, 4] = dA[:, :, 4] @ p
    return dA, db


# Agent body used in the marine simulation and experiment (rows kept unnormalized).
TETRA_A0 = np.array(
    [
        [0.24, 0.84, 0.48],
        [0.24, -0.84, 0.48],
        [-0.97, 0.00, 0.00],
        [0.24, 0.00, -0.97],
    ]
)
TETRA_B0 = np.array([0.06, 0.06, 0.24, 0.06])


def tetrahedron_template(scale: float = 1.0) -> PolytopeTemplate:
    """Marine agent tetrahedron, optionally scaled about the body origin."""
    return PolytopeTemplate(TETRA_A0, TETRA_B0 * scale, name="tetrahedron" if scale == 1.0 else f"tetrahedron*{scale:g}")


def box_template(half_extents) -> PolytopeTemplate:
    h = np.broadcast_to(np.asarray(half_extents, dtype=float), (3,))
    A0 = np.vstack([np.eye(3), -np.eye(3)])
    return PolytopeTemplate(A0, np.concatenate([h, h]), name=f"box{tuple(float(x) for x in h)}")


def box_polytope(lo, hi) -> Polytope:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return Polytope(np.vstack([np.eye(3), -np.eye(3)]), np.concatenate([hi, -lo]))
