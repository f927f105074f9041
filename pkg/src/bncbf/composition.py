"""Boolean composition of barrier functions: AND = min, OR = max, NOT = negation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

SMOOTH = "smooth"
DISTANCE = "distance"


@dataclass(frozen=True)
class Leaf:
    id: str
    kind: str = SMOOTH


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise ValueError("And needs at least one child")
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise ValueError("Or needs at least one child")
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class Not:
    child: "BarrierNode"


BarrierNode = Union[Leaf, And, Or, Not]


def all_of(*children) -> BarrierNode:
    """AND of ``children``; a single child is returned unchanged."""
    return children[0] if len(children) == 1 else And(tuple(children))


def any_of(*children) -> BarrierNode:
    return children[0] if len(children) == 1 else Or(tuple(children))


def evaluate(node: BarrierNode, values: Mapping[str, float]) -> float:
    """Composite value given leaf values keyed by leaf id."""
    if isinstance(node, Leaf):
        return float(values[node.id])
    if isinstance(node, And):
        return min(evaluate(c, values) for c in node.children)
    if isinstance(node, Or):
        return max(evaluate(c, values) for c in node.children)
    if isinstance(node, Not):
        return -evaluate(node.child, values)
    raise TypeError(f"not a barrier node: {node!r}")


def normalize(node: BarrierNode, negate: bool = False) -> BarrierNode:
    """Push every NOT down to the leaves (De Morgan); value is unchanged."""
    if isinstance(node, Leaf):
        return Not(node) if negate else node
    if isinstance(node, Not):
        return normalize(node.child, not negate)
    kids = tuple(normalize(c, negate) for c in node.children)
    if isinstance(node, And):
        return Or(kids) if negate else And(kids)
    if isinstance(node, Or):
        return And(kids) if negate else Or(kids)
    raise TypeError(f"not a barrier node: {node!r}")


def signed_leaves(node: BarrierNode, sign: int = 1) -> list[tuple[Leaf, int]]:
    """Every leaf occurrence with its effective sign (-1 under an odd number of NOTs)."""
    if isinstance(node, Leaf):
        return [(node, sign)]
    if isinstance(node, Not):
        return signed_leaves(node.child, -sign)
    out: list[tuple[Leaf, int]] = []
    for c in node.children:
        out.extend(signed_leaves(c, sign))
    return out


def leaf_ids(node: BarrierNode) -> list[str]:
    """Distinct leaf ids in first-appearance order."""
    seen: dict[str, None] = {}
    for leaf, _ in signed_leaves(node):
        seen.setdefault(leaf.id, None)
    return list(seen)


def depth(node: BarrierNode) -> int:
    if isinstance(node, Leaf):
        return 0
    if isinstance(node, Not):
        return 1 + depth(node.child)
    return 1 + max(depth(c) for c in node.children)


@dataclass(frozen=True)
class ActiveSets:
    """Leaves within ``eps1`` of the composite value, split by kind.

    Each entry maps a leaf id to its effective sign.
    """

    smooth: dict = field(default_factory=dict)
    nonsmooth: dict = field(default_factory=dict)
    eps1: float = 0.0
    h_g: float = 0.0

    @property
    def smooth_ids(self) -> set[str]:
        return set(self.smooth)

    @property
    def nonsmooth_ids(self) -> set[str]:
        return set(self.nonsmooth)

    @property
    def size(self) -> int:
        return len(self.smooth) + len(self.nonsmooth)


def active_sets(node: BarrierNode, values: Mapping[str, float], eps1: float) -> ActiveSets:
    """Almost-active leaves: ``|s * h_leaf - h_g| <= eps1`` with ``s`` the leaf sign.

    Ties are not broken; every qualifying leaf is returned.
    """
    h_g = evaluate(node, values)
    smooth: dict[str, int] = {}
    nonsmooth: dict[str, int] = {}
    for leaf, sign in signed_leaves(node):
        if abs(sign * float(values[leaf.id]) - h_g) <= eps1:
            target = nonsmooth if leaf.kind == DISTANCE else smooth
            if target.get(leaf.id, sign) != sign:
                raise ValueError(f"leaf {leaf.id!r} appears with both signs")
            target[leaf.id] = sign
    return ActiveSets(smooth, nonsmooth, eps1, h_g)


def blame(node: BarrierNode, values: Mapping[str, float], below: float = 0.0) -> list[str]:
    """Leaves responsible for the composite falling below ``below``.

    An AND is below as soon as one child is; an OR only when all are, so every
    child of a failing OR is blamed.
    """
    out: dict[str, None] = {}

    def walk(n, sign):
        if isinstance(n, Leaf):
            if sign * float(values[n.id]) < below:
                out.setdefault(n.id, None)
            return
        if isinstance(n, Not):
            walk(n.child, -sign)
            return
        for c in n.children:
            if sign * evaluate(c, values) < below:
                walk(c, sign)

    if evaluate(node, values) < below:
        walk(node, 1)
    return list(out)


# ------------------------------------------------------------ nested-array form


def parse(expr, kind_of=None) -> BarrierNode:
    """Build a tree from nested arrays such as ``["and", ["leaf", "ca:1:2"], ...]``.

    ``kind_of`` maps a leaf id to its kind; leaves default to smooth.
    """
    if isinstance(expr, str):
        return Leaf(expr, kind_of(expr) if kind_of else SMOOTH)
    if not isinstance(expr, (list, tuple)) or not expr:
        raise ValueError(f"bad tree expression: {expr!r}")
    op = str(expr[0]).lower()
    args = expr[1:]
    if op == "leaf":
        if len(args) != 1:
            raise ValueError("leaf takes exactly one id")
        return parse(str(args[0]), kind_of)
    if op == "not":
        if len(args) != 1:
            raise ValueError("not takes exactly one operand")
        return Not(parse(args[0], kind_of))
    if op in ("and", "or"):
        if not args:
            raise ValueError(f"{op} needs operands")
        kids = tuple(parse(a, kind_of) for a in args)
        return And(kids) if op == "and" else Or(kids)
    raise ValueError(f"unknown operator {op!r}")


def to_expr(node: BarrierNode):
    if isinstance(node, Leaf):
        return ["leaf", node.id]
    if isinstance(node, Not):
        return ["not", to_expr(node.child)]
    name = "and" if isinstance(node, And) else "or"
    return [name, *(to_expr(c) for c in node.children)]
