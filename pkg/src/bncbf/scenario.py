"""Scenario model and the deterministic closed-loop simulation engine.

Agent ids are integers. Leaf ids encode the constraint and the agents it
involves, e.g. ``ca:2:11`` (collision avoidance between agents 2 and 11) or
``los:3:1:5`` (line of sight from 3 to 1, clear of 5). See ``LEAF_PREFIXES``.
"""

from __future__ import annotations

import copy
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import dynamics
from .composition import (
    DISTANCE,
    SMOOTH,
    ActiveSets,
    BarrierNode,
    Leaf,
    active_sets,
    all_of,
    blame,
    any_of,
    evaluate,
    leaf_ids,
    parse,
    signed_leaves,
    to_expr,
)
from .constraints import (
    EXPERIMENT_FOV_ROWS,
    DegenerateSeparationError,
    FovCone,
    LosCorridor,
    RangeBand,
    RegularityError,
    collision_value,
    fov_value,
    los_value,
    range_values,
    regularity_value,
    state_value,
)
from .distance import DistanceResult, DistanceSolveError, derivative_terms
from .filter import (
    DistanceBlock,
    FilterInfeasibleError,
    LinearAlpha,
    SmoothRow,
    assemble,
    solve,
    state_key,
)
from .geometry import (
    DomainError,
    GeometryError,
    Polytope,
    PolytopeTemplate,
    body_to_world,
    box_template,
    instantiate,
    pose_jacobians,
    tetrahedron_template,
)

ROLES = ("leader", "follower", "obstacle")
LEAF_PREFIXES = {
    "state": (1, SMOOTH),
    "reg": (2, SMOOTH),
    "fov": (2, SMOOTH),  # optional third field: polyhedral plane index
    "rmin": (2, SMOOTH),
    "rmax": (2, SMOOTH),
    "ca": (2, DISTANCE),
    "los": (3, DISTANCE),
}
VIOLATION_TOL = 1e-3
DECREASE_TOL = 1e-3
BROAD_PHASE_MARGIN = 0.05


class ScenarioError(ValueError):
    pass


class ConfigMismatchError(ScenarioError):
    pass


# ------------------------------------------------------------------- config


@dataclass
class ConstraintParams:
    fov: str = "ellipsoidal"  # or "polyhedral"
    fov_half_angle: float = math.radians(15.0)
    fov_planes: list | None = None  # polyhedral plane normals, one row per plane
    r_min: float = 0.5
    r_max: float = 8.0
    r_ca: float = 0.3
    r_los: float = 0.0
    mu: float = 100.0
    eps1: float = 0.01
    eps2: float = 0.01
    alpha_slope: float = 0.2
    psi_max: float = 0.3 * math.pi
    reg_margin: float = 0.001
    u_max: float = 0.2

    def cone(self) -> FovCone:
        if self.fov == "ellipsoidal":
            return FovCone.ellipsoidal(self.fov_half_angle)
        if self.fov == "polyhedral":
            rows = EXPERIMENT_FOV_ROWS if self.fov_planes is None else np.asarray(self.fov_planes)
            return FovCone.polyhedral(np.asarray(rows, dtype=float).T)
        raise ScenarioError(f"unknown fov kind {self.fov!r}")


@dataclass
class AgentSpec:
    id: int
    role: str
    pose: list
    goal: list | None = None
    mask: str = "full"
    template: object = "tetrahedron"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ScenarioError(f"agent {self.id}: unknown role {self.role!r}")
        self.pose = [float(x) for x in self.pose]
        if len(self.pose) != 5:
            raise ScenarioError(f"agent {self.id}: pose must have 5 entries")
        if self.goal is not None:
            self.goal = [float(x) for x in self.goal]
            if len(self.goal) != 5:
                raise ScenarioError(f"agent {self.id}: goal must have 5 entries")
        if self.role == "obstacle":
            self.mask = "static"
        if self.mask not in dynamics.MASKS:
            raise ScenarioError(f"agent {self.id}: unknown mask {self.mask!r}")


def make_template(desc) -> PolytopeTemplate:
    """``"tetrahedron"``, ``{"kind": "tetrahedron", "scale": s}``,
    ``{"kind": "box", "half_extents": [...]}`` or ``{"kind": "custom", "A0", "b0"}``."""
    if isinstance(desc, str):
        desc = {"kind": desc}
    kind = desc.get("kind")
    if kind == "tetrahedron":
        return tetrahedron_template(float(desc.get("scale", 1.0)))
    if kind == "box":
        return box_template(desc["half_extents"])
    if kind == "custom":
        return PolytopeTemplate(np.asarray(desc["A0"]), np.asarray(desc["b0"]), desc.get("name", "custom"))
    raise ScenarioError(f"unknown template {desc!r}")


@dataclass
class Scenario:
    name: str
    agents: list
    params: ConstraintParams = field(default_factory=ConstraintParams)
    dt: float = 0.1
    duration: float = 20.0
    seed: int = 0
    jitter: float = 0.0  # uniform initial-position jitter (m), seeded
    tree: list | None = None  # nested-array expression; None means the task tree
    filter_bypass: bool = False
    broad_phase: bool = False

    def __post_init__(self):
        self.agents = [a if isinstance(a, AgentSpec) else AgentSpec(**a) for a in self.agents]
        if isinstance(self.params, dict):
            self.params = ConstraintParams(**self.params)
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("agent ids must be unique")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if self.duration < 0:
            raise ScenarioError("duration must be non-negative")

    def ids(self, role: str) -> list[int]:
        return [a.id for a in self.agents if a.role == role]

    @property
    def leader(self) -> int:
        leaders = self.ids("leader")
        if len(leaders) != 1:
            raise ConfigMismatchError(f"expected exactly one leader, found {len(leaders)}")
        return leaders[0]

    def agent(self, agent_id: int) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        params = d.get("params", {})
        pknown = {f.name for f in fields(ConstraintParams)}
        if set(params) - pknown:
            raise ScenarioError(f"unknown parameter keys: {sorted(set(params) - pknown)}")
        return cls(**{**d, "params": ConstraintParams(**params)})

    def with_overrides(self, **kw) -> "Scenario":
        """Copy with top-level or parameter fields replaced (``None`` values ignored)."""
        s = copy.deepcopy(self)
        pnames = {f.name for f in fields(ConstraintParams)}
        for k, v in kw.items():
            if v is None:
                continue
            if k in pnames:
                setattr(s.params, k, type(getattr(s.params, k))(v))
            elif hasattr(s, k) and k not in ("agents", "params"):
                cur = getattr(s, k)
                setattr(s, k, type(cur)(v) if cur is not None else v)
            else:
                raise ScenarioError(f"unknown override {k!r}")
        s.__post_init__()
        return s

    def with_followers(self, n: int) -> "Scenario":
        """Keep the leader, obstacles and the ``n`` lowest-id followers."""
        fol = sorted(self.ids("follower"))
        if not 1 <= n <= len(fol):
            raise ScenarioError(f"cannot keep {n} of {len(fol)} followers")
        keep = set(fol[:n])
        s = copy.deepcopy(self)
        s.agents = [a for a in s.agents if a.role != "follower" or a.id in keep]
        s.name = f"{self.name}-nf{n}"
        s.tree = None
        return s


BUILTIN = {"formation": "formation.json", "pool": "pool.json"}


def load_scenario(path_or_name) -> Scenario:
    """Load a scenario from a JSON file or a builtin name (``formation``, ``pool``)."""
    key = str(path_or_name)
    if key in BUILTIN:
        text = resources.files("bncbf.scenarios").joinpath(BUILTIN[key]).read_text()
    else:
        text = Path(key).read_text()
    return Scenario.from_dict(json.loads(text))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


# --------------------------------------------------------------- task tree


def _kind_of(leaf_id: str) -> str:
    prefix = leaf_id.split(":", 1)[0]
    if prefix not in LEAF_PREFIXES:
        raise ScenarioError(f"unknown leaf prefix in {leaf_id!r}")
    return LEAF_PREFIXES[prefix][1]


def collision_pairs(scenario: Scenario) -> list[tuple[int, int]]:
    """Ordered pairs ``i in {1} + N_F``, ``j in {1} + N_O + N_F`` minus ``i``."""
    movers = [scenario.leader, *scenario.ids("follower")]
    others = [scenario.leader, *scenario.ids("obstacle"), *scenario.ids("follower")]
    return [(i, j) for i in movers for j in others if j != i]


def build_task_tree(scenario: Scenario) -> BarrierNode:
    """``h_D & h_reg & h_ca & (OR over followers of tracking the leader)``.

    Tracking by follower ``i`` is FOV & range & line of sight, the latter
    clear of every other follower and every obstacle.

    Raises:
        ConfigMismatchError: without exactly one leader or any follower.
    """
    lead = scenario.leader
    fols = scenario.ids("follower")
    obs = scenario.ids("obstacle")
    if not fols:
        raise ConfigMismatchError("tracking needs at least one follower")
    n_fov = scenario.params.cone().n_leaves
    h_d = all_of(*(Leaf(f"state:{i}") for i in [lead, *fols]))
    h_reg = all_of(*(Leaf(f"reg:{i}:{lead}") for i in fols))
    h_ca = all_of(*(Leaf(f"ca:{i}:{j}", DISTANCE) for i, j in collision_pairs(scenario)))
    tracking = []
    for i in fols:
        if n_fov == 1:
            fov = [Leaf(f"fov:{i}:{lead}")]
        else:
            fov = [Leaf(f"fov:{i}:{lead}:{k}") for k in range(n_fov)]
        blockers = [k for k in [*fols, *obs] if k not in (i, lead)]
        los = [Leaf(f"los:{i}:{lead}:{k}", DISTANCE) for k in blockers]
        tracking.append(all_of(*fov, Leaf(f"rmax:{i}:{lead}"), Leaf(f"rmin:{i}:{lead}"), *los))
    return all_of(h_d, h_reg, h_ca, any_of(*tracking))


def scenario_tree(scenario: Scenario) -> BarrierNode:
    if scenario.tree is None:
        return build_task_tree(scenario)
    return parse(scenario.tree, _kind_of)


# --------------------------------------------------------- leaf evaluation


def _parse_leaf(leaf_id: str) -> tuple[str, tuple[int, ...]]:
    prefix, *rest = leaf_id.split(":")
    try:
        nums = tuple(int(x) for x in rest)
    except ValueError as exc:
        raise ScenarioError(f"bad leaf id {leaf_id!r}") from exc
    n_agents = LEAF_PREFIXES[prefix][0] if prefix in LEAF_PREFIXES else None
    if n_agents is None:
        raise ScenarioError(f"unknown leaf prefix in {leaf_id!r}")
    extra = 1 if prefix == "fov" else 0
    if not n_agents <= len(nums) <= n_agents + extra:
        raise ScenarioError(f"bad leaf id {leaf_id!r}")
    return prefix, nums


def _swapped(res: DistanceResult) -> DistanceResult:
    return DistanceResult(
        h=res.h,
        distance=res.distance,
        offset=res.offset,
        witness_a=res.witness_b,
        witness_b=res.witness_a,
        lambda_a=res.lambda_b,
        lambda_b=res.lambda_a,
        Pa=res.Pb,
        Pb=res.Pa,
        status=res.status,
    )


class LeafSystem:
    """Leaf registry of a scenario: evaluates every leaf at a joint state.

    The joint state is an ``(n_agents, 5)`` array in scenario agent order; the
    stacked input covers the non-obstacle agents in the same order.
    """

    def __init__(self, scenario: Scenario, tree: BarrierNode | None = None):
        self.scenario = scenario
        self.params = scenario.params
        self.tree = tree if tree is not None else scenario_tree(scenario)
        self.ids = [a.id for a in scenario.agents]
        self.row = {a: k for k, a in enumerate(self.ids)}
        self.movers = [a.id for a in scenario.agents if a.role != "obstacle"]
        self.slot = {a: 5 * k for k, a in enumerate(self.movers)}
        self.n_u = 5 * len(self.movers)
        self.templates = {a.id: make_template(a.template) for a in scenario.agents}
        self.cone = self.params.cone()
        self.band = RangeBand(self.params.r_min, self.params.r_max)
        self.corridor = LosCorridor(self.params.mu, self.params.r_los)
        self.leaf_ids = leaf_ids(self.tree)
        self.parsed = {lid: _parse_leaf(lid) for lid in self.leaf_ids}
        self.kind = {lid: _kind_of(lid) for lid in self.leaf_ids}
        for lid, (_, nums) in self.parsed.items():
            agents = nums[:-1] if lid.startswith("fov") and len(nums) == 3 else nums
            for a in agents:
                if a not in self.row:
                    raise ScenarioError(f"leaf {lid!r} references unknown agent {a}")
        for leaf, sign in signed_leaves(self.tree):
            if leaf.kind == DISTANCE and sign < 0:
                raise ScenarioError(f"distance leaf {leaf.id!r} appears negated")
            if leaf.kind != self.kind[leaf.id]:
                raise ScenarioError(f"leaf {leaf.id!r} has kind {leaf.kind!r}")
        self.distance_ids = [l for l in self.leaf_ids if self.kind[l] == DISTANCE]
        self.smooth_ids = [l for l in self.leaf_ids if self.kind[l] == SMOOTH]
        masks = [dynamics.MASKS[scenario.agent(a).mask] for a in self.movers]
        m = np.concatenate(masks) if masks else np.zeros(0)
        self.lb = -self.params.u_max * m
        self.ub = self.params.u_max * m
        self.alpha = LinearAlpha(self.params.alpha_slope)

    def initial_state(self) -> np.ndarray:
        X = np.array([a.pose for a in self.scenario.agents], dtype=float)
        if self.scenario.jitter > 0:
            rng = np.random.default_rng(self.scenario.seed)
            for k, a in enumerate(self.scenario.agents):
                if a.role == "obstacle":
                    continue
                d = rng.uniform(-self.scenario.jitter, self.scenario.jitter, size=3)
                d *= dynamics.MASKS[a.mask][:3]  # frozen coordinates stay put
                X[k, :3] += d
        return X

    def goals(self) -> np.ndarray:
        return np.array(
            [a.goal if a.goal is not None else a.pose for a in self.scenario.agents], dtype=float
        )

    def nominal(self, X: np.ndarray) -> np.ndarray:
        G = self.goals()
        u = np.zeros(self.n_u)
        for a in self.movers:
            k = self.row[a]
            agent = self.scenario.agent(a)
            s = self.slot[a]
            u[s : s + 5] = dynamics.nominal_input(X[k], G[k], agent.mask, self.params.u_max)
        return u

    def advance(self, X: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
        Y = X.copy()
        for a in self.movers:
            k, s = self.row[a], self.slot[a]
            Y[k] = dynamics.step(X[k], u[s : s + 5], dt)
        return Y

    def evaluate(self, X, broad_phase: bool = False, executor=None) -> "StepEvaluation":
        return StepEvaluation(self, np.asarray(X, dtype=float), broad_phase, executor)

    def h_g(self, X) -> float:
        return self.evaluate(X).h_g


class StepEvaluation:
    """All leaf values at one joint state, plus the derivative data the filter needs."""

    def __init__(self, system: LeafSystem, X: np.ndarray, broad_phase: bool, executor):
        self.system = system
        self.X = X
        self.state_key = state_key(X)
        p = system.params
        self.values: dict[str, float] = {}
        self.grads: dict[str, tuple[tuple[int, ...], np.ndarray]] = {}
        self.results: dict[str, DistanceResult] = {}
        self.skipped: set[str] = set()
        self._poly: dict[int, Polytope] = {}
        for a in system.ids:
            self._poly[a] = instantiate(system.templates[a], X[system.row[a]])
        for lid in system.smooth_ids:
            self._smooth(lid)
        todo = list(system.distance_ids)
        if broad_phase:
            todo = self._broad_phase(todo, p.eps1)
        t0 = time.perf_counter()
        # solve once per unordered collision pair
        jobs: dict[tuple, str] = {}
        for lid in todo:
            prefix, nums = system.parsed[lid]
            key = ("ca", *sorted(nums)) if prefix == "ca" else (prefix, *nums)
            jobs.setdefault(key, lid)
        keys = list(jobs)
        run = lambda k: self._distance(jobs[k])  # noqa: E731
        solved = list(executor.map(run, keys)) if executor else [run(k) for k in keys]
        by_key = dict(zip(keys, solved))
        for lid in todo:
            prefix, nums = system.parsed[lid]
            key = ("ca", *sorted(nums)) if prefix == "ca" else (prefix, *nums)
            res = by_key[key]
            if jobs[key] != lid:
                res = _swapped(res)
            self.results[lid] = res
            self.values[lid] = res.h
        self.distance_ms = 1e3 * (time.perf_counter() - t0)
        self.n_distance_solved = len(keys)
        self.n_ca = sum(1 for l in system.distance_ids if l.startswith("ca:"))
        self.n_los = len(system.distance_ids) - self.n_ca
        self.active: ActiveSets = active_sets(system.tree, self.values, p.eps1)
        self.h_g = self.active.h_g

    # smooth leaves
    def _smooth(self, lid: str) -> None:
        sys_ = self.system
        prefix, nums = sys_.parsed[lid]
        X, row, p = self.X, sys_.row, sys_.params
        if prefix == "state":
            h, g = state_value(X[row[nums[0]]], p.psi_max)
            agents = (nums[0],)
        elif prefix == "reg":
            h, g = regularity_value(X[row[nums[0]]], X[row[nums[1]]], p.reg_margin)
            agents = nums[:2]
        elif prefix == "fov":
            k = nums[2] if len(nums) == 3 else 0
            h, g = fov_value(sys_.cone, X[row[nums[0]]], X[row[nums[1]]], k)
            agents = nums[:2]
        else:
            lo, hi = range_values(sys_.band, X[row[nums[0]]], X[row[nums[1]]])
            h, g = lo if prefix == "rmin" else hi
            agents = nums[:2]
        self.values[lid] = float(h)
        self.grads[lid] = (agents, g)

    # distance leaves
    def _distance(self, lid: str) -> DistanceResult:
        sys_ = self.system
        prefix, nums = sys_.parsed[lid]
        if prefix == "ca":
            return collision_value(self._poly[nums[0]], self._poly[nums[1]], sys_.params.r_ca)
        i, j, k = nums
        return los_value(sys_.corridor, self.X[sys_.row[i]], self.X[sys_.row[j]], self._poly[k])

    def _sphere(self, a: int) -> tuple[np.ndarray, float]:
        c, r = self.system.templates[a].bounding_sphere()
        eta = self.X[self.system.row[a]]
        return eta[:3] + body_to_world(eta[3], eta[4]) @ c, r

    def _bounds(self, lid: str) -> tuple[float, float]:
        """Cheap ``(lower, upper)`` bounds on a distance leaf value."""
        sys_ = self.system
        prefix, nums = sys_.parsed[lid]
        if prefix == "ca":
            (ca, ra), (cb, rb) = self._sphere(nums[0]), self._sphere(nums[1])
            off = sys_.params.r_ca
        else:
            pi = self.X[sys_.row[nums[0]], :3]
            pj = self.X[sys_.row[nums[1]], :3]
            ca = 0.5 * (pi + pj)
            ra = 0.5 * float(np.linalg.norm(pi - pj)) + 2.0 / sys_.params.mu
            cb, rb = self._sphere(nums[2])
            off = sys_.params.r_los
        d = float(np.linalg.norm(ca - cb))
        return d - ra - rb - off, d - off

    def _broad_phase(self, todo: list[str], eps1: float) -> list[str]:
        # Composite value with distance leaves at their upper bounds bounds h_g
        # from above; a leaf whose lower bound clears it by eps1 + margin can
        # neither set h_g nor be almost active.
        bounds = {lid: self._bounds(lid) for lid in todo}
        upper = dict(self.values)
        upper.update({lid: b[1] for lid, b in bounds.items()})
        H = evaluate(self.system.tree, upper)
        keep = []
        for lid in todo:
            lo = bounds[lid][0]
            if lo > H + eps1 + BROAD_PHASE_MARGIN:
                self.skipped.add(lid)
                self.values[lid] = lo
            else:
                keep.append(lid)
        return keep

    # filter interface
    def smooth_row(self, leaf_id: str, sign: int) -> SmoothRow:
        sys_ = self.system
        agents, g = self.grads[leaf_id]
        grad_u = np.zeros(sys_.n_u)
        for n, a in enumerate(agents):
            if a in sys_.slot:
                J = dynamics.jacobian(self.X[sys_.row[a]])
                s = sys_.slot[a]
                grad_u[s : s + 5] += g[5 * n : 5 * n + 5] @ J
        return SmoothRow(leaf_id, sign * grad_u)

    def _input_map(self, a: int, dA: np.ndarray, db: np.ndarray, J: np.ndarray, out_A, out_b):
        s = self.system.slot[a]
        out_A[:, :, s : s + 5] += np.einsum("mkn,nl->mkl", dA, J)
        out_b[:, s : s + 5] += db @ J

    def distance_block(self, leaf_id: str, eps2: float) -> DistanceBlock:
        sys_ = self.system
        prefix, nums = sys_.parsed[leaf_id]
        res = self.results[leaf_id]
        n = sys_.n_u
        ma, mb = res.Pa.n_faces, res.Pb.n_faces
        dA_a, db_a = np.zeros((ma, 3, n)), np.zeros((ma, n))
        dA_b, db_b = np.zeros((mb, 3, n)), np.zeros((mb, n))
        if prefix == "ca":
            i, k = nums
            if i in sys_.slot:
                dA, db = pose_jacobians(sys_.templates[i], self.X[sys_.row[i]])
                self._input_map(i, dA, db, dynamics.jacobian(self.X[sys_.row[i]]), dA_a, db_a)
        else:
            i, j, k = nums
            pi, pj = self.X[sys_.row[i], :3], self.X[sys_.row[j], :3]
            dA6, db6 = sys_.corridor.jacobians(pi, pj)
            for a, cols in ((i, slice(0, 3)), (j, slice(3, 6))):
                if a in sys_.slot:
                    Jp = dynamics.jacobian(self.X[sys_.row[a]])[:3, :]
                    self._input_map(a, dA6[:, :, cols], db6[:, cols], Jp, dA_a, db_a)
        if k in sys_.slot:
            dA, db = pose_jacobians(sys_.templates[k], self.X[sys_.row[k]])
            self._input_map(k, dA, db, dynamics.jacobian(self.X[sys_.row[k]]), dA_b, db_b)
        return DistanceBlock(leaf_id, derivative_terms(res, dA_a, db_a, dA_b, db_b, eps2))

    def negative_leaves(self, tol: float = 0.0) -> list[str]:
        """Leaves that pull ``h_g`` below ``-tol``."""
        return blame(self.system.tree, self.values, -tol)


# -------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    ok: bool
    problems: list
    h_g: float | None = None
    negative_leaves: list = field(default_factory=list)

    def __str__(self) -> str:
        if self.ok:
            return f"PASS h_g(0)={self.h_g:.6g}"
        return "FAIL\n" + "\n".join(f"  - {p}" for p in self.problems)


def validate(scenario: Scenario) -> ValidationReport:
    """Load-time checks: templates, pitch/yaw domain, roles, LOS containment, ``h_g(0) >= 0``."""
    problems: list[str] = []
    for a in scenario.agents:
        try:
            make_template(a.template).validate()
        except (GeometryError, ScenarioError, KeyError) as exc:
            problems.append(f"agent {a.id}: template: {exc}")
        for label, eta in (("pose", a.pose), ("goal", a.goal)):
            if eta is None:
                continue
            if abs(eta[3]) >= math.pi / 2 - dynamics.PITCH_GUARD:
                problems.append(f"agent {a.id}: {label} pitch {eta[3]:.6g} outside the pitch domain")
            if a.role != "obstacle" and abs(eta[4]) >= scenario.params.psi_max:
                problems.append(f"agent {a.id}: {label} yaw {eta[4]:.6g} outside the yaw domain")
        if a.role != "obstacle" and a.goal is None:
            problems.append(f"agent {a.id}: missing goal")
    if problems:
        return ValidationReport(False, problems)
    try:
        system = LeafSystem(scenario)
    except (ScenarioError, GeometryError) as exc:
        return ValidationReport(False, [str(exc)])
    X = system.initial_state()
    # the segment between the endpoints must lie in the corridor polytope
    for lid in system.distance_ids:
        prefix, nums = system.parsed[lid]
        if prefix != "los":
            continue
        pi, pj = X[system.row[nums[0]], :3], X[system.row[nums[1]], :3]
        try:
            P = system.corridor.build(pi, pj)
        except RegularityError as exc:
            problems.append(f"{lid}: {exc}")
            continue
        for s in np.linspace(0.0, 1.0, 11):
            if not P.contains(s * pi + (1 - s) * pj, tol=1e-7):
                problems.append(f"{lid}: segment leaves the corridor polytope")
                break
    try:
        ev = system.evaluate(X)
    except (DegenerateSeparationError, RegularityError, DomainError, DistanceSolveError) as exc:
        return ValidationReport(False, problems + [f"evaluation failed: {exc}"])
    neg = ev.negative_leaves()
    if ev.h_g < 0:
        problems.append(
            f"initial state outside the safe set: h_g = {ev.h_g:.6g}; negative leaves: "
            + ", ".join(f"{l}={ev.values[l]:.4g}" for l in ev.negative_leaves())
        )
    return ValidationReport(not problems, problems, ev.h_g, neg)


# ----------------------------------------------------------------- running


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BNCBF_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class RunLog:
    scenario: str
    agent_ids: list
    roles: list
    leaf_ids: list
    times: np.ndarray  # (T,)
    states: np.ndarray  # (T, N, 5)
    u_ref: np.ndarray  # (T, n_u)
    u_safe: np.ndarray  # (T, n_u)
    h_g: np.ndarray  # (T,)
    leaves: np.ndarray  # (T, L)
    n_active_smooth: np.ndarray
    n_active_nonsmooth: np.ndarray
    decrease_ok: np.ndarray  # bool (T,)
    n_ca: np.ndarray
    n_los: np.ndarray
    n_solved: np.ndarray
    distance_ms: np.ndarray
    filter_ms: np.ndarray
    status: list
    final_time: float
    final_states: np.ndarray  # (N, 5)
    final_h_g: float
    goals: np.ndarray  # (N, 5)
    events: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def violations(self) -> list:
        return [e for e in self.events if e["type"] == "violation"]

    @property
    def faults(self) -> list:
        return [e for e in self.events if e["type"] == "fault"]

    @property
    def min_h_g(self) -> float:
        vals = [*self.h_g.tolist(), self.final_h_g]
        vals = [v for v in vals if not math.isnan(v)]
        return min(vals) if vals else float("nan")

    def goal_errors(self) -> dict:
        """Final position error (m) per non-obstacle agent."""
        return {
            a: float(np.linalg.norm(self.final_states[k, :3] - self.goals[k, :3]))
            for k, (a, r) in enumerate(zip(self.agent_ids, self.roles))
            if r != "obstacle"
        }


def run(
    scenario: Scenario,
    *,
    filter_bypass: bool | None = None,
    broad_phase: bool | None = None,
    threads: int | None = None,
    progress=None,
) -> RunLog:
    """Closed-loop simulation: evaluate leaves, filter the nominal input, integrate.

    Faults and violations are logged and the run continues. A fault holds
    zero input for that step (filtered runs) or keeps the nominal (bypass).
    """
    bypass = scenario.filter_bypass if filter_bypass is None else filter_bypass
    broad = scenario.broad_phase if broad_phase is None else broad_phase
    system = LeafSystem(scenario)
    p = scenario.params
    dt = scenario.dt
    n_steps = int(round(scenario.duration / dt))
    X = system.initial_state()
    N, n_u, L = len(system.ids), system.n_u, len(system.leaf_ids)
    rec = {
        k: []
        for k in (
            "times states u_ref u_safe h_g leaves n_as n_an dec n_ca n_los n_solved dms fms status"
        ).split()
    }
    events: list[dict] = []
    n_threads = threads or _threads()
    executor = ThreadPoolExecutor(n_threads) if n_threads > 1 else None

    def evaluate_safely(X, t):
        try:
            return system.evaluate(X, broad, executor), None
        except (DegenerateSeparationError, RegularityError, DomainError, DistanceSolveError) as exc:
            events.append({"type": "fault", "time": t, "reason": f"evaluation: {exc}"})
            return None, exc

    try:
        ev, _ = evaluate_safely(X, 0.0)
        for k in range(n_steps):
            t = k * dt
            u_ref = system.nominal(X)
            status = "bypass" if bypass else "ok"
            fms = 0.0
            if ev is None:
                u = u_ref if bypass else np.zeros(n_u)
                status = "fault"
            elif bypass:
                u = u_ref
            else:
                t0 = time.perf_counter()
                try:
                    prob = assemble(X, ev, u_ref, system.lb, system.ub, p.eps2, system.alpha)
                    sol = solve(prob)
                    u = sol.u_safe
                    status = sol.status
                except FilterInfeasibleError as exc:
                    events.append(
                        {
                            "type": "fault",
                            "time": t,
                            "reason": str(exc),
                            "h_g": ev.h_g,
                            "state": X.tolist(),
                        }
                    )
                    u = np.zeros(n_u)
                    status = "fault"
                fms = 1e3 * (time.perf_counter() - t0)
            h = ev.h_g if ev is not None else float("nan")
            if ev is not None and h < -VIOLATION_TOL:
                events.append(
                    {"type": "violation", "time": t, "h_g": h, "leaves": ev.negative_leaves(VIOLATION_TOL)}
                )
            X_next = system.advance(X, u, dt)
            ev_next, _ = evaluate_safely(X_next, (k + 1) * dt)
            dec = True
            if ev is not None and ev_next is not None:
                dec = ev_next.h_g >= h - system.alpha(h) * dt - DECREASE_TOL
            rec["times"].append(t)
            rec["states"].append(X)
            rec["u_ref"].append(u_ref)
            rec["u_safe"].append(u)
            rec["h_g"].append(h)
            rec["leaves"].append(
                [ev.values[l] for l in system.leaf_ids] if ev is not None else [math.nan] * L
            )
            rec["n_as"].append(len(ev.active.smooth) if ev is not None else 0)
            rec["n_an"].append(len(ev.active.nonsmooth) if ev is not None else 0)
            rec["dec"].append(dec)
            rec["n_ca"].append(ev.n_ca if ev is not None else 0)
            rec["n_los"].append(ev.n_los if ev is not None else 0)
            rec["n_solved"].append(ev.n_distance_solved if ev is not None else 0)
            rec["dms"].append(ev.distance_ms if ev is not None else 0.0)
            rec["fms"].append(fms)
            rec["status"].append(status)
            X, ev = X_next, ev_next
            if progress is not None:
                progress(k + 1, n_steps)
        final_h = ev.h_g if ev is not None else float("nan")
        if ev is not None and n_steps > 0 and final_h < -VIOLATION_TOL:
            events.append(
                {
                    "type": "violation",
                    "time": n_steps * dt,
                    "h_g": final_h,
                    "leaves": ev.negative_leaves(VIOLATION_TOL),
                }
            )
    finally:
        if executor is not None:
            executor.shutdown()

    def arr(key, shape, dtype=float):
        a = np.array(rec[key], dtype=dtype)
        return a.reshape((len(rec[key]), *shape))

    return RunLog(
        scenario=scenario.name,
        agent_ids=list(system.ids),
        roles=[a.role for a in scenario.agents],
        leaf_ids=list(system.leaf_ids),
        times=arr("times", ()),
        states=arr("states", (N, 5)),
        u_ref=arr("u_ref", (n_u,)),
        u_safe=arr("u_safe", (n_u,)),
        h_g=arr("h_g", ()),
        leaves=arr("leaves", (L,)),
        n_active_smooth=arr("n_as", (), int),
        n_active_nonsmooth=arr("n_an", (), int),
        decrease_ok=arr("dec", (), bool),
        n_ca=arr("n_ca", (), int),
        n_los=arr("n_los", (), int),
        n_solved=arr("n_solved", (), int),
        distance_ms=arr("dms", ()),
        filter_ms=arr("fms", ()),
        status=list(rec["status"]),
        final_time=n_steps * dt,
        final_states=X,
        final_h_g=final_h,
        goals=system.goals(),
        events=events,
        config={**scenario.to_dict(), "filter_bypass": bypass, "broad_phase": broad},
    )


# -------------------------------------------------------------------- stats


def _ms(x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"mean": float("nan"), "std": float("nan")}
    return {"mean": float(x.mean()), "std": float(x.std())}


def stats(log: RunLog) -> dict:
    """Per-step problem statistics and solve times (ms), plus run outcome."""
    active = log.n_active_smooth + log.n_active_nonsmooth
    errs = log.goal_errors()
    return {
        "scenario": log.scenario,
        "n_steps": log.n_steps,
        "n_followers": sum(r == "follower" for r in log.roles),
        "n_obstacles": sum(r == "obstacle" for r in log.roles),
        "active_set": _ms(active),
        "ca_qp_per_step": int(log.n_ca[0]) if log.n_steps else 0,
        "los_qp_per_step": int(log.n_los[0]) if log.n_steps else 0,
        "distance_qp_solved": _ms(log.n_solved),
        "min_h_g": log.min_h_g,
        "final_h_g": log.final_h_g,
        "max_goal_error": max(errs.values()) if errs else 0.0,
        "goal_errors": {str(k): v for k, v in errs.items()},
        "violations": len(log.violations),
        "faults": len(log.faults),
        "decrease_failures": int((~log.decrease_ok).sum()),
        "timing_ms": {
            "distance": _ms(log.distance_ms),
            "filter": _ms(log.filter_ms),
            "total": _ms(log.distance_ms + log.filter_ms),
        },
    }


# ---------------------------------------------------------------- file I/O

TRAJ_FIELDS = ["step", "time", "agent", "role", "x", "y", "z", "theta", "psi"]
INPUT_NAMES = ["u", "v", "w", "q", "r"]


def write_log(log: RunLog, out_dir) -> dict:
    """Write ``traj.csv``, ``barriers.csv``, ``timing.csv``, ``events.json`` and ``summary.json``."""
    import csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    movers = [a for a, r in zip(log.agent_ids, log.roles) if r != "obstacle"]
    slot = {a: 5 * k for k, a in enumerate(movers)}
    with open(out / "traj.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRAJ_FIELDS + [f"{n}_ref" for n in INPUT_NAMES] + INPUT_NAMES)
        for s in range(log.n_steps):
            for k, (a, r) in enumerate(zip(log.agent_ids, log.roles)):
                if a in slot:
                    ur = log.u_ref[s, slot[a] : slot[a] + 5]
                    us = log.u_safe[s, slot[a] : slot[a] + 5]
                else:
                    ur = us = np.zeros(5)
                w.writerow([s, repr(float(log.times[s])), a, r, *map(repr, log.states[s, k].tolist()),
                            *map(repr, ur.tolist()), *map(repr, us.tolist())])
    with open(out / "barriers.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "time", "h_g", "n_active_smooth", "n_active_nonsmooth", "decrease_ok", *log.leaf_ids])
        for s in range(log.n_steps):
            w.writerow([s, repr(float(log.times[s])), repr(float(log.h_g[s])), int(log.n_active_smooth[s]),
                        int(log.n_active_nonsmooth[s]), int(log.decrease_ok[s]),
                        *map(repr, log.leaves[s].tolist())])
    with open(out / "timing.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "time", "n_ca_qp", "n_los_qp", "n_distance_solved", "distance_ms", "filter_ms",
                    "total_ms", "filter_status"])
        for s in range(log.n_steps):
            w.writerow([s, repr(float(log.times[s])), int(log.n_ca[s]), int(log.n_los[s]), int(log.n_solved[s]),
                        repr(float(log.distance_ms[s])), repr(float(log.filter_ms[s])),
                        repr(float(log.distance_ms[s] + log.filter_ms[s])), log.status[s]])
    (out / "events.json").write_text(json.dumps(log.events, indent=1) + "\n")
    summary = {
        "stats": stats(log),
        "agent_ids": log.agent_ids,
        "roles": log.roles,
        "final_time": log.final_time,
        "final_states": log.final_states.tolist(),
        "final_h_g": log.final_h_g,
        "goals": log.goals.tolist(),
        "config": log.config,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


def read_log(out_dir) -> RunLog:
    """Inverse of :func:`write_log`."""
    import csv

    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text())
    ids, roles = summary["agent_ids"], summary["roles"]
    N = len(ids)
    movers = [a for a, r in zip(ids, roles) if r != "obstacle"]
    slot = {a: 5 * k for k, a in enumerate(movers)}
    n_u = 5 * len(movers)
    with open(out / "barriers.csv", newline="") as f:
        rows = list(csv.reader(f))
    leaf_names = rows[0][6:]
    B = rows[1:]
    T = len(B)
    states = np.zeros((T, N, 5))
    u_ref = np.zeros((T, n_u))
    u_safe = np.zeros((T, n_u))
    row_of = {a: k for k, a in enumerate(ids)}
    with open(out / "traj.csv", newline="") as f:
        r = csv.reader(f)
        next(r)
        for line in r:
            s, a = int(line[0]), int(line[2])
            states[s, row_of[a]] = [float(x) for x in line[4:9]]
            if a in slot:
                u_ref[s, slot[a] : slot[a] + 5] = [float(x) for x in line[9:14]]
                u_safe[s, slot[a] : slot[a] + 5] = [float(x) for x in line[14:19]]
    with open(out / "timing.csv", newline="") as f:
        Tm = list(csv.reader(f))[1:]
    return RunLog(
        scenario=summary["stats"]["scenario"],
        agent_ids=ids,
        roles=roles,
        leaf_ids=leaf_names,
        times=np.array([float(b[1]) for b in B]),
        states=states,
        u_ref=u_ref,
        u_safe=u_safe,
        h_g=np.array([float(b[2]) for b in B]),
        leaves=np.array([[float(x) for x in b[6:]] for b in B]).reshape(T, len(leaf_names)),
        n_active_smooth=np.array([int(b[3]) for b in B], dtype=int),
        n_active_nonsmooth=np.array([int(b[4]) for b in B], dtype=int),
        decrease_ok=np.array([bool(int(b[5])) for b in B], dtype=bool),
        n_ca=np.array([int(t[2]) for t in Tm], dtype=int),
        n_los=np.array([int(t[3]) for t in Tm], dtype=int),
        n_solved=np.array([int(t[4]) for t in Tm], dtype=int),
        distance_ms=np.array([float(t[5]) for t in Tm]),
        filter_ms=np.array([float(t[6]) for t in Tm]),
        status=[t[8] for t in Tm],
        final_time=summary["final_time"],
        final_states=np.array(summary["final_states"], dtype=float).reshape(N, 5),
        final_h_g=summary["final_h_g"],
        goals=np.array(summary["goals"], dtype=float).reshape(N, 5),
        events=json.loads((out / "events.json").read_text()),
        config=summary["config"],
    )


def sweep(base: Scenario, follower_counts=(2, 5, 7, 9), **run_kw) -> list[dict]:
    """Run follower-count variants of ``base`` sequentially; one stats row each."""
    rows = []
    for n in follower_counts:
        log = run(base.with_followers(n), **run_kw)
        rows.append(stats(log))
    return rows
