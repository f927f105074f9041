"""Boolean composition of nonsmooth control barrier functions and a QP safety filter
for multi-agent field-of-view, line-of-sight, range and collision constraints."""

from .composition import And, Leaf, Not, Or, active_sets, evaluate, normalize
from .distance import DistanceResult, derivative_bound_terms, min_distance
from .filter import FilterProblem, FilterSolution, LinearAlpha, assemble, solve, verify_decrease
from .geometry import Polytope, PolytopeTemplate, instantiate, rotation_matrix
from .scenario import RunLog, Scenario, build_task_tree, load_scenario, run, stats

__version__ = "0.1.0"

__all__ = [
    "And", "Leaf", "Not", "Or", "active_sets", "evaluate", "normalize",
    "DistanceResult", "derivative_bound_terms", "min_distance",
    "FilterProblem", "FilterSolution", "LinearAlpha", "assemble", "solve", "verify_decrease",
    "Polytope", "PolytopeTemplate", "instantiate", "rotation_matrix",
    "RunLog", "Scenario", "build_task_tree", "load_scenario", "run", "stats",
]
