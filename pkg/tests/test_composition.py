import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bncbf.composition import (
    DISTANCE,
    And,
    Leaf,
    Not,
    Or,
    active_sets,
    all_of,
    any_of,
    blame,
    depth,
    evaluate,
    leaf_ids,
    normalize,
    parse,
    signed_leaves,
    to_expr,
)
from oracles import brute_eval, expr_depth, random_expr

NAMES = [f"h{k}" for k in range(6)]


def has_not_above_leaf(node) -> bool:
    if isinstance(node, Leaf):
        return False
    if isinstance(node, Not):
        return not isinstance(node.child, Leaf) or has_not_above_leaf(node.child)
    return any(has_not_above_leaf(c) for c in node.children)


@given(st.integers(0, 2**32 - 1))
def test_random_trees_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    expr = random_expr(rng, NAMES, int(rng.integers(0, 7)))
    vals = {n: float(v) for n, v in zip(NAMES, rng.normal(size=len(NAMES)))}
    tree = parse(expr)
    ref = brute_eval(expr, vals)
    assert evaluate(tree, vals) == ref
    norm = normalize(tree)
    assert evaluate(norm, vals) == ref
    assert not has_not_above_leaf(norm)
    assert evaluate(normalize(Not(tree)), vals) == -ref
    assert normalize(Not(Not(tree))) == norm
    assert to_expr(parse(to_expr(tree))) == to_expr(tree)
    assert depth(tree) == expr_depth(expr)


def test_operators():
    v = {"a": 1.0, "b": -2.0, "c": 0.5}
    a, b, c = Leaf("a"), Leaf("b"), Leaf("c")
    assert evaluate(And((a, b, c)), v) == -2.0
    assert evaluate(Or((a, b, c)), v) == 1.0
    assert evaluate(Not(Or((a, b))), v) == -1.0
    assert all_of(a) is a and any_of(a) is a


def test_normalize_de_morgan():
    a, b = Leaf("a"), Leaf("b")
    assert normalize(Not(And((a, b)))) == Or((Not(a), Not(b)))
    assert normalize(Not(Or((a, Not(b))))) == And((Not(a), b))


def test_signed_leaves_and_ids():
    t = And((Leaf("a"), Not(Or((Leaf("b"), Not(Leaf("a")))))))
    assert [(l.id, s) for l, s in signed_leaves(t)] == [("a", 1), ("b", -1), ("a", 1)]
    assert leaf_ids(t) == ["a", "b"]


def test_active_sets_band_and_kinds():
    t = And((Leaf("s1"), Leaf("d1", DISTANCE), Or((Leaf("s2"), Leaf("d2", DISTANCE)))))
    v = {"s1": 0.105, "d1": 0.1, "s2": 0.5, "d2": 0.109}
    act = active_sets(t, v, eps1=0.01)
    assert act.h_g == 0.1
    assert act.smooth == {"s1": 1}
    # d2 sits in a losing OR branch but is within the band
    assert act.nonsmooth == {"d1": 1, "d2": 1}
    assert act.size == 3


def test_active_sets_negated_leaf_sign():
    t = And((Not(Leaf("a")), Leaf("b")))
    act = active_sets(t, {"a": -0.2, "b": 0.2}, eps1=1e-9)
    assert act.smooth == {"a": -1, "b": 1}


def test_active_sets_conflicting_signs():
    t = And((Leaf("a"), Not(Leaf("a"))))
    with pytest.raises(ValueError):
        active_sets(t, {"a": 0.0}, eps1=0.1)


def test_blame():
    t = And((Leaf("a"), Or((Leaf("b"), Leaf("c")))))
    assert blame(t, {"a": 1.0, "b": -1.0, "c": 2.0}) == []
    assert blame(t, {"a": -1.0, "b": -1.0, "c": 2.0}) == ["a"]
    assert sorted(blame(t, {"a": 1.0, "b": -1.0, "c": -2.0})) == ["b", "c"]


@pytest.mark.parametrize(
    "bad", [[], ["xor", "a"], ["not", "a", "b"], ["and"], ["leaf", "a", "b"], 3]
)
def test_parse_rejects(bad):
    with pytest.raises(ValueError):
        parse(bad)


def test_empty_nodes_rejected():
    with pytest.raises(ValueError):
        And(())
    with pytest.raises(ValueError):
        Or(())
