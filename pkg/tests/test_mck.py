import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softprune.errors import CapacityOverflow, EmptyFront, Infeasible, ShapeMismatch, TooLarge
from softprune.mck import (
    ItemGroup,
    MCKInstance,
    condense,
    merge,
    scale_costs,
    solve_brute_force,
    solve_dp,
    solve_mim,
)

TWO = MCKInstance.from_lists([[0, 5], [0, 4]], [[0, 3], [0, 4]], 5)


def test_brute_force_two_groups():
    sol = solve_brute_force(TWO)
    assert sol.chosen == (1, 0)
    assert sol.to_json()["chosen"] == [2, 1]
    assert (sol.total_value, sol.total_cost) == (5, 3)


def test_brute_force_single_group_argmax():
    inst = MCKInstance.from_lists([[1, 9, 4]], [[1, 1, 1]], 1)
    assert solve_brute_force(inst).chosen == (1,)
    assert solve_mim(inst).total_value == 9


def test_brute_force_infeasible():
    inst = MCKInstance.from_lists([[7]], [[9]], 5)
    with pytest.raises(Infeasible):
        solve_brute_force(inst)
    with pytest.raises(Infeasible):
        solve_mim(inst)
    with pytest.raises(Infeasible):
        solve_dp(inst)


def test_brute_force_bound():
    inst = MCKInstance.from_lists([[0] * 10] * 4, [[0] * 10] * 4, 1)
    with pytest.raises(TooLarge):
        solve_brute_force(inst, max_combinations=1000)


def test_brute_force_tie_prefers_cheaper_then_lexicographic():
    inst = MCKInstance.from_lists([[1, 1, 1]], [[2, 1, 1]], 5)
    assert solve_brute_force(inst).chosen == (1,)


@pytest.mark.parametrize(
    "values,costs,cap,ev,ec,eb",
    [
        ([3, 5], [2, 1], 10, [5], [1], [1]),
        ([1, 2, 3], [1, 2, 3], 10, [1, 2, 3], [1, 2, 3], [0, 1, 2]),
        ([4, 4], [2, 2], 10, [4], [2], [0]),
        ([1, 2, 3], [1, 2, 3], 2, [1, 2], [1, 2], [0, 1]),
    ],
)
def test_condense_examples(values, costs, cap, ev, ec, eb):
    front = condense(values, costs, cap)
    assert front.values.tolist() == ev
    assert front.costs.tolist() == ec
    assert front.backrefs.tolist() == eb


def test_condense_empty():
    with pytest.raises(EmptyFront):
        condense([1, 2], [5, 6], 4)
    with pytest.raises(ShapeMismatch):
        condense([1], [1, 2], 4)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=30),
    st.integers(0, 25),
)
def test_condense_is_exact_pareto_filter(items, cap):
    values = np.array([v for v, _ in items], float)
    costs = np.array([c for _, c in items], float)
    if costs.min() > cap:
        with pytest.raises(EmptyFront):
            condense(values, costs, cap)
        return
    front = condense(values, costs, cap)
    assert front.is_strictly_monotone()
    assert np.all(front.costs <= cap)
    kept = set(front.backrefs.tolist())
    for i in range(len(items)):
        if costs[i] > cap:
            assert i not in kept
            continue
        dominated = any(
            costs[j] <= costs[i] and values[j] > values[i] for j in range(len(items))
        ) or any(
            values[j] == values[i] and costs[j] < costs[i] for j in range(len(items))
        ) or any(
            values[j] == values[i] and costs[j] == costs[i] and j < i for j in range(len(items))
        )
        assert (i in kept) == (not dominated)


def test_merge_examples():
    res = merge(ItemGroup([0, 5], [0, 3]), ItemGroup([0, 4], [0, 4]), 5)
    assert res.group.values.tolist() == [0, 5]
    assert res.group.costs.tolist() == [0, 3]
    assert res.left.tolist() == [0, 1]
    assert res.right.tolist() == [0, 0]
    res = merge(ItemGroup([2], [1]), ItemGroup([3], [1]), 10)
    assert (res.group.values.tolist(), res.group.costs.tolist()) == ([5], [2])
    with pytest.raises(EmptyFront):
        merge(ItemGroup([1], [6]), ItemGroup([1], [6]), 5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_merge_soundness(seed):
    rng = np.random.default_rng(seed)
    a = ItemGroup(rng.integers(0, 10, 5), rng.integers(0, 10, 5))
    b = ItemGroup(rng.integers(0, 10, 4), rng.integers(0, 10, 4))
    cap = 12.0
    try:
        res = merge(a, b, cap)
    except EmptyFront:
        assert (a.costs[:, None] + b.costs[None, :]).min() > cap
        return
    g = res.group
    # backpointers reproduce every merged entry
    assert np.array_equal(g.values, a.values[res.left] + b.values[res.right])
    assert np.array_equal(g.costs, a.costs[res.left] + b.costs[res.right])
    for i, j in itertools.product(range(5), range(4)):
        c = a.costs[i] + b.costs[j]
        if c <= cap:
            v = a.values[i] + b.values[j]
            assert np.any((g.values >= v) & (g.costs <= c))


def random_instance(rng, groups=5, items=6, vmax=100.0):
    n = int(rng.integers(1, groups + 1))
    sizes = rng.integers(1, items + 1, n)
    values = [rng.uniform(0, vmax, k) for k in sizes]
    costs = [rng.uniform(0, 10, k) for k in sizes]
    cap = float(rng.uniform(0, sum(c.max() for c in costs)))
    return MCKInstance.from_lists(values, costs, cap)


def _agree(inst, other):
    try:
        expected = other(inst)
    except Infeasible:
        with pytest.raises(Infeasible):
            solve_mim(inst)
        return
    got = solve_mim(inst)
    got.check(inst)
    assert got.total_value == expected.total_value


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mim_matches_brute_force(seed):
    _agree(random_instance(np.random.default_rng(seed)), solve_brute_force)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mim_without_bound_matches_brute_force(seed):
    inst = random_instance(np.random.default_rng(seed), groups=7, items=5)
    try:
        expected = solve_brute_force(inst).total_value
    except Infeasible:
        with pytest.raises(Infeasible):
            solve_mim(inst, bound=False)
        return
    assert solve_mim(inst, bound=False).total_value == expected


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mim_matches_dp_on_integer_costs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    values = [rng.uniform(0, 50, int(rng.integers(1, 10))) for _ in range(n)]
    costs = [rng.integers(0, 30, v.size).astype(float) for v in values]
    cap = float(rng.integers(0, sum(int(c.max()) for c in costs) + 1))
    _agree(MCKInstance.from_lists(values, costs, cap), lambda i: solve_dp(i, scale=1))


def test_capacity_zero_picks_best_zero_cost_items():
    inst = MCKInstance.from_lists([[1, 3, 9], [2, 0]], [[0, 0, 1], [0, 0]], 0)
    sol = solve_mim(inst)
    assert sol.chosen == (1, 0)
    assert sol.total_value == 5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=1, max_size=10), st.integers(0, 100))
def test_reduces_to_zero_one_knapsack(items, cap):
    inst = MCKInstance.from_lists([[0, v] for v, _ in items], [[0, c] for _, c in items], cap)
    best = 0
    for pick in itertools.product([0, 1], repeat=len(items)):
        if sum(c for (_, c), p in zip(items, pick) if p) <= cap:
            best = max(best, sum(v for (v, _), p in zip(items, pick) if p))
    assert solve_mim(inst).total_value == best


def test_dp_two_group_example_and_scaling():
    assert solve_dp(TWO).total_value == 5
    assert scale_costs([0.15, 0.24], 10).tolist() == [1, 2]
    assert scale_costs([1.234], 1000).tolist() == [1234]


def test_dp_capacity_overflow():
    inst = MCKInstance.from_lists([[1]], [[1]], 1e9)
    with pytest.raises(CapacityOverflow):
        solve_dp(inst, scale=1000, max_cells=10**6)


def test_solution_recomputes():
    rng = np.random.default_rng(5)
    for _ in range(50):
        inst = random_instance(rng)
        try:
            sol = solve_mim(inst)
        except Infeasible:
            continue
        value, cost = inst.evaluate(sol.chosen)
        assert math.isclose(value, sol.total_value, abs_tol=1e-9)
        assert cost <= inst.capacity


def test_instance_validation_and_json_roundtrip():
    with pytest.raises(ValueError):
        MCKInstance.from_lists([[1]], [[-1]], 1)
    with pytest.raises(ValueError):
        MCKInstance.from_lists([[]], [[]], 1)
    with pytest.raises(ShapeMismatch):
        ItemGroup([1, 2], [1])
    again = MCKInstance.from_json(TWO.to_json())
    assert again.capacity == TWO.capacity
    assert [g.values.tolist() for g in again.groups] == [g.values.tolist() for g in TWO.groups]


def test_groups_are_read_only():
    g = ItemGroup([1.0], [2.0])
    with pytest.raises(ValueError):
        g.values[0] = 5


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_capacity_equal_to_a_selection(seed, bound):
    # capacity is exactly the cost of one selection, summed in group order
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 5, int(rng.integers(1, 6)))
    values = [rng.uniform(0, 100, k) for k in sizes]
    costs = [rng.uniform(0, 10, k) for k in sizes]
    cap = 0.0
    for c in costs:
        cap += c[int(rng.integers(0, c.size))]
    inst = MCKInstance.from_lists(values, costs, cap)
    assert solve_mim(inst, bound=bound).total_value == solve_brute_force(inst).total_value
