"""Exact solvers for the multiple-choice knapsack (MCK) problem.

An instance is a list of item groups and a capacity; a solution picks exactly
one item per group so that the summed cost fits the capacity and the summed
value is maximal.  Three solvers are provided:

* :func:`solve_mim` -- meet-in-the-middle over Pareto fronts (the workhorse),
* :func:`solve_dp` -- dynamic programming over integer-scaled costs,
* :func:`solve_brute_force` -- full enumeration, used as a test oracle.

Item indices reported in :class:`MCKSolution` are the group ``labels`` (by
default the 0-based position of the item in its group).  A selection fits
when its cost is within ``CAPACITY_RTOL`` (relative) of the capacity, so that
ties at the boundary do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CapacityOverflow, EmptyFront, Infeasible, ShapeMismatch, TooLarge

__all__ = [
    "ItemGroup",
    "MCKInstance",
    "MCKSolution",
    "ParetoFront",
    "MergeResult",
    "condense",
    "merge",
    "solve_brute_force",
    "solve_mim",
    "solve_dp",
    "scale_costs",
]

DEFAULT_ENUMERATION_BOUND = 10**7
DEFAULT_DP_CELLS = 10**8
# Selections may exceed the capacity by this relative amount.  Sums of the
# same costs in different orders differ in the last bits, and the solvers
# add in different orders; the margin makes them agree on what fits.
CAPACITY_RTOL = 1e-12


def _effective_capacity(capacity: float) -> float:
    return capacity + CAPACITY_RTOL * max(1.0, abs(capacity))


def _as_vector(x, dtype=np.float64) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ItemGroup:
    values: np.ndarray
    costs: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        values = _as_vector(self.values)
        costs = _as_vector(self.costs)
        if self.labels is None:
            labels = np.arange(values.size, dtype=np.int64)
            labels.setflags(write=False)
        else:
            labels = _as_vector(self.labels, np.int64)
        if not (values.size == costs.size == labels.size):
            raise ShapeMismatch(
                f"values/costs/labels lengths differ: {values.size}, {costs.size}, {labels.size}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class MCKInstance:
    groups: tuple
    capacity: float

    def __post_init__(self):
        groups = tuple(g if isinstance(g, ItemGroup) else ItemGroup(*g) for g in self.groups)
        capacity = float(self.capacity)
        if not groups:
            raise ValueError("an MCK instance needs at least one group")
        if not math.isfinite(capacity) or capacity < 0:
            raise ValueError(f"capacity must be a finite nonnegative number, got {capacity}")
        for k, g in enumerate(groups):
            if len(g) == 0:
                raise ValueError(f"group {k} is empty")
            if not np.all(np.isfinite(g.values)):
                raise ValueError(f"group {k} has non-finite values")
            if not np.all(np.isfinite(g.costs)) or np.any(g.costs < 0):
                raise ValueError(f"group {k} has negative or non-finite costs")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "capacity", capacity)

    @classmethod
    def from_lists(cls, values: Sequence[Sequence[float]], costs: Sequence[Sequence[float]], capacity: float):
        if len(values) != len(costs):
            raise ShapeMismatch("values and costs must have one entry per group")
        return cls(tuple(ItemGroup(v, c) for v, c in zip(values, costs)), capacity)

    @property
    def sizes(self) -> tuple:
        return tuple(len(g) for g in self.groups)

    def evaluate(self, chosen: Sequence[int]) -> tuple[float, float]:
        """Total (value, cost) of a selection given as one label per group."""
        if len(chosen) != len(self.groups):
            raise ShapeMismatch("need exactly one chosen item per group")
        vals, costs = [], []
        for g, label in zip(self.groups, chosen):
            pos = np.flatnonzero(g.labels == label)
            if pos.size == 0:
                raise KeyError(f"label {label} not present in group")
            vals.append(g.values[pos[0]])
            costs.append(g.costs[pos[0]])
        return math.fsum(vals), math.fsum(costs)

    def to_json(self) -> dict:
        return {
            "capacity": self.capacity,
            "groups": [{"values": g.values.tolist(), "costs": g.costs.tolist()} for g in self.groups],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MCKInstance":
        try:
            groups = tuple(ItemGroup(g["values"], g["costs"]) for g in obj["groups"])
            return cls(groups, obj["capacity"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed MCK instance: {exc}") from exc


@dataclass(frozen=True)
class MCKSolution:
    chosen: tuple
    total_value: float
    total_cost: float

    def check(self, instance: MCKInstance, tol: float = 1e-9) -> None:
        """Raise AssertionError if the solution is inconsistent with ``instance``."""
        value, cost = instance.evaluate(self.chosen)
        assert abs(value - self.total_value) <= tol, (value, self.total_value)
        assert abs(cost - self.total_cost) <= tol, (cost, self.total_cost)
        assert cost <= instance.capacity + tol, (cost, instance.capacity)

    def to_json(self, one_based: bool = True) -> dict:
        offset = 1 if one_based else 0
        return {
            "chosen": [int(k) + offset for k in self.chosen],
            "value": self.total_value,
            "cost": self.total_cost,
        }


def _solution(instance: MCKInstance, chosen) -> MCKSolution:
    chosen = tuple(int(k) for k in chosen)
    value, cost = instance.evaluate(chosen)
    return MCKSolution(chosen, value, cost)


# ---------------------------------------------------------------------------
# Pareto machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParetoFront:
    values: np.ndarray
    costs: np.ndarray
    backrefs: np.ndarray

    def __len__(self) -> int:
        return int(self.values.size)

    def is_strictly_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) > 0) and np.all(np.diff(self.costs) > 0))


def _condense_arrays(values: np.ndarray, costs: np.ndarray, capacity: float, keys: np.ndarray | None = None):
    """Indices of the non-dominated, affordable items, ordered by ascending cost.

    ``keys`` gives the tie order among identical (value, cost) pairs; the
    smallest key survives.  Defaults to the position in the input.
    """
    idx = np.flatnonzero(costs <= capacity)
    if idx.size == 0:
        return idx
    v = values[idx]
    c = costs[idx]
    k = idx if keys is None else keys[idx]
    # cost ascending, then value descending, then key ascending
    order = np.lexsort((k, -v, c))
    idx, v = idx[order], v[order]
    keep = np.empty(idx.size, dtype=bool)
    keep[0] = True
    if idx.size > 1:
        keep[1:] = v[1:] > np.maximum.accumulate(v)[:-1]
    return idx[keep]


def condense(values, costs, capacity: float) -> ParetoFront:
    """Drop dominated and unaffordable items.

    An item survives iff its cost is within ``capacity`` and every other item
    that costs no more is strictly less valuable.  Of several identical
    (value, cost) items only the lowest index survives.  The result is sorted
    by cost, and both values and costs are strictly increasing.

    Raises :class:`EmptyFront` when nothing is affordable.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    if values.shape != costs.shape:
        raise ShapeMismatch("values and costs must have the same length")
    if values.size == 0:
        raise ShapeMismatch("cannot condense an empty item list")
    keep = _condense_arrays(values, costs, capacity)
    if keep.size == 0:
        raise EmptyFront(f"no item has cost <= {capacity}")
    return ParetoFront(values[keep], costs[keep], keep)


class MergeResult(NamedTuple):
    group: ItemGroup
    left: np.ndarray
    right: np.ndarray


def merge(a: ItemGroup, b: ItemGroup, capacity: float) -> MergeResult:
    """Combine two groups into the condensed front of all pairwise sums.

    Pair ``(i, j)`` is stored at flat index ``i * len(b) + j``; the merged
    group's labels are those flat indices, and ``left``/``right`` hold the
    positions in ``a`` and ``b`` recovered by quotient and remainder.
    """
    if len(a) == 0 or len(b) == 0:
        raise ShapeMismatch("cannot merge an empty group")
    n = len(b)
    values = (a.values[:, None] + b.values[None, :]).ravel()
    costs = (a.costs[:, None] + b.costs[None, :]).ravel()
    keep = _condense_arrays(values, costs, capacity)
    if keep.size == 0:
        raise EmptyFront(f"no pair of items has cost <= {capacity}")
    group = ItemGroup(values[keep], costs[keep], keep)
    return MergeResult(group, keep // n, keep % n)


# ---------------------------------------------------------------------------
# Meet-in-the-middle
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    """A Pareto front over a subset of the original groups.

    Leaves map front positions to item positions of one original group;
    inner nodes map them to positions of their two children.
    """

    values: np.ndarray
    costs: np.ndarray
    group: int = -1
    positions: np.ndarray = None
    children: tuple = field(default=())
    left: np.ndarray = None
    right: np.ndarray = None

    def resolve(self, pos: int, out: dict) -> None:
        stack = [(self, pos)]
        while stack:
            node, p = stack.pop()
            if node.group >= 0:
                out[node.group] = int(node.positions[p])
            else:
                stack.append((node.children[0], int(node.left[p])))
                stack.append((node.children[1], int(node.right[p])))


def _feasible_pairs(ca: np.ndarray, cb: np.ndarray, limit: float):
    """Row-major (i, j) pairs with ``ca[i] + cb[j] <= limit``; ``cb`` ascending."""
    counts = np.searchsorted(cb, limit - ca, side="right")
    # searchsorted works on ``limit - ca``; correct the rare rounding mismatch
    # against the actual sum used everywhere else.
    n = cb.size
    while True:
        last = counts - 1
        bad = (counts > 0) & (ca + cb[np.maximum(last, 0)] > limit)
        if not bad.any():
            break
        counts[bad] -= 1
    while True:
        nxt = np.minimum(counts, n - 1)
        grow = (counts < n) & (ca + cb[nxt] <= limit)
        if not grow.any():
            break
        counts[grow] += 1
    total = int(counts.sum())
    rows = np.repeat(np.arange(ca.size), counts)
    starts = np.cumsum(counts) - counts
    cols = np.arange(total) - np.repeat(starts, counts)
    return rows, cols


def _merge_nodes(a: _Node, b: _Node, limit: float) -> _Node:
    # Both fronts are sorted by cost, so only affordable pairs are formed;
    # the surviving set equals that of condensing the full cross product.
    rows, cols = _feasible_pairs(a.costs, b.costs, limit)
    if rows.size == 0:
        raise EmptyFront("merged front is empty at this capacity")
    values = a.values[rows] + b.values[cols]
    costs = a.costs[rows] + b.costs[cols]
    keep = _condense_arrays(values, costs, limit)
    return _Node(values[keep], costs[keep], children=(a, b), left=rows[keep], right=cols[keep])


def _sweep(a: _Node, b: _Node, capacity: float) -> tuple[int, int]:
    """Best affordable pair from two cost-sorted fronts.

    For every item of ``a`` the best partner in ``b`` is the most expensive
    one that still fits, because front values rise with cost.
    """
    ca, cb = a.costs, b.costs
    j = np.searchsorted(cb, capacity - ca, side="right") - 1
    n = cb.size
    while True:
        bad = (j >= 0) & (ca + cb[np.maximum(j, 0)] > capacity)
        if not bad.any():
            break
        j[bad] -= 1
    while True:
        nxt = np.minimum(j + 1, n - 1)
        grow = (j + 1 < n) & (ca + cb[nxt] <= capacity)
        if not grow.any():
            break
        j[grow] += 1
    ok = np.flatnonzero(j >= 0)
    if ok.size == 0:
        raise Infeasible("no combination of items fits the capacity")
    jj = j[ok]
    total_v = a.values[ok] + b.values[jj]
    total_c = ca[ok] + cb[jj]
    best = np.lexsort((ok, total_c, -total_v))[0]
    return int(ok[best]), int(jj[best])


def _upper_hull(costs: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Vertices of the upper concave hull of a cost-sorted front."""
    hull: list = []
    for k in range(costs.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (costs[b] - costs[a]) * (values[k] - values[a]) - (values[b] - values[a]) * (costs[k] - costs[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return np.array(hull, dtype=np.int64)


class _LPBound:
    """Linear-relaxation bounds over sets of original groups.

    Relaxing "one item per group" to convex combinations turns each group
    into its upper hull; the best relaxed value at budget ``b`` is then a
    concave piecewise-linear function found by taking hull edges in order of
    decreasing slope.
    """

    def __init__(self, fronts):
        self.base_c = np.array([c[0] for c, _ in fronts])
        self.base_v = np.array([v[0] for _, v in fronts])
        groups, dc, dv, steps = [], [], [], []
        self.hulls = []
        for g, (c, v) in enumerate(fronts):
            h = _upper_hull(c, v)
            self.hulls.append(h)
            groups.append(np.full(h.size - 1, g))
            dc.append(np.diff(c[h]))
            dv.append(np.diff(v[h]))
            steps.append(np.arange(h.size - 1))
        self.edge_group = np.concatenate(groups)
        self.edge_dc = np.concatenate(dc)
        self.edge_dv = np.concatenate(dv)
        self.edge_step = np.concatenate(steps)
        order = np.lexsort((self.edge_step, self.edge_group, -(self.edge_dv / self.edge_dc)))
        self.edge_group = self.edge_group[order]
        self.edge_dc = self.edge_dc[order]
        self.edge_dv = self.edge_dv[order]
        self.edge_step = self.edge_step[order]

    def curve(self, excluded: np.ndarray):
        """Breakpoints of the relaxed value of every group not in ``excluded``."""
        keep = ~np.isin(self.edge_group, excluded)
        rest = np.ones(self.base_c.size, dtype=bool)
        rest[excluded] = False
        x0 = math.fsum(self.base_c[rest])
        y0 = math.fsum(self.base_v[rest])
        xs = np.concatenate(([x0], x0 + np.cumsum(self.edge_dc[keep])))
        ys = np.concatenate(([y0], y0 + np.cumsum(self.edge_dv[keep])))
        return xs, ys

    def greedy_value(self, capacity: float) -> float:
        """Value of a feasible selection built from whole hull edges.

        The budget is shaved slightly so the selection stays feasible under
        any summation order.
        """
        capacity -= 1e-9 * max(1.0, abs(capacity))
        spent = math.fsum(self.base_c)
        value = math.fsum(self.base_v)
        blocked = np.zeros(self.base_c.size, dtype=bool)
        for g, dc, dv in zip(self.edge_group, self.edge_dc, self.edge_dv):
            if blocked[g]:
                continue
            if spent + dc <= capacity:
                spent += dc
                value += dv
            else:
                blocked[g] = True
        return value


def _completion_bound(values, costs, curve, capacity) -> np.ndarray:
    xs, ys = curve
    budget = capacity - costs
    out = values + np.interp(budget, xs, ys)
    # only cut items that miss the cheapest completion by more than rounding
    slack = 8 * np.finfo(float).eps * max(1.0, abs(capacity), abs(xs[0]))
    out[budget < xs[0] - slack] = -np.inf
    return out


def solve_mim(instance: MCKInstance, bound: bool = True) -> MCKSolution:
    """Exact MCK solve by recursive pairwise merging of Pareto fronts.

    Group ``l`` is merged with group ``L - 1 - l`` at every level (an odd
    middle group passes through), and fronts are condensed after each merge.
    The last two fronts are combined by a sort-and-sweep pass instead of a
    full merge.

    Partial fronts are trimmed by the capacity left after the cheapest item
    of every other group.  With ``bound=True`` they are also trimmed by an
    upper bound: a partial selection is dropped when even the linear
    relaxation of the remaining groups cannot lift it to the value of a known
    feasible selection.  Neither rule can remove an optimal selection.
    """
    capacity = _effective_capacity(instance.capacity)
    nodes = []
    for g, group in enumerate(instance.groups):
        keep = _condense_arrays(group.values, group.costs, capacity)
        if keep.size == 0:
            raise EmptyFront(f"group {g}: every item costs more than the capacity {capacity}")
        nodes.append(_Node(group.values[keep], group.costs[keep], group=g, positions=keep))
    members = [np.array([g]) for g in range(len(nodes))]

    lp = None
    if bound and len(nodes) > 2:
        lp = _LPBound([(node.costs, node.values) for node in nodes])
        if math.fsum(lp.base_c) > capacity:
            raise Infeasible("the cheapest selection exceeds the capacity")
        lower = lp.greedy_value(capacity)
        slack = 1e-9 * max(1.0, abs(lower))

        def prune(node, groups):
            curve = lp.curve(groups)
            ub = _completion_bound(node.values, node.costs, curve, capacity)
            keep = np.flatnonzero(ub >= lower - slack)
            return keep

        for k, node in enumerate(nodes):
            keep = prune(node, members[k])
            nodes[k] = _Node(node.values[keep], node.costs[keep], group=node.group, positions=node.positions[keep])

    while len(nodes) > 2:
        mins = np.array([node.costs[0] for node in nodes])
        min_total = math.fsum(mins)
        if min_total > capacity:
            raise Infeasible("the cheapest selection exceeds the capacity")
        size = len(nodes)
        merged, merged_members = [], []
        for l in range(size // 2):
            r = size - 1 - l
            a, b = nodes[l], nodes[r]
            limit = capacity - (min_total - mins[l] - mins[r])
            # conservative slack: rounding must never cut a completable pair
            limit = min(capacity, limit + 4 * np.finfo(float).eps * max(1.0, capacity))
            node = _merge_nodes(a, b, limit)
            groups = np.concatenate((members[l], members[r]))
            if lp is not None:
                keep = prune(node, groups)
                if keep.size == 0:
                    raise Infeasible("no completable selection survives the bound")
                node = _Node(node.values[keep], node.costs[keep], children=node.children,
                             left=node.left[keep], right=node.right[keep])
            merged.append(node)
            merged_members.append(groups)
        if size % 2:
            merged.append(nodes[size // 2])
            merged_members.append(members[size // 2])
        nodes, members = merged, merged_members

    picks: dict = {}
    if len(nodes) == 1:
        nodes[0].resolve(len(nodes[0].values) - 1, picks)
    else:
        i, j = _sweep(nodes[0], nodes[1], capacity)
        nodes[0].resolve(i, picks)
        nodes[1].resolve(j, picks)
    chosen = [instance.groups[g].labels[picks[g]] for g in range(len(instance.groups))]
    return _solution(instance, chosen)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def solve_brute_force(instance: MCKInstance, max_combinations: int = DEFAULT_ENUMERATION_BOUND) -> MCKSolution:
    """Enumerate every selection; ties go to lower cost, then the
    lexicographically smallest tuple of item positions."""
    sizes = instance.sizes
    total = math.prod(sizes)
    if total > max_combinations:
        raise TooLarge(f"{total} combinations exceed the enumeration bound {max_combinations}")
    tv = np.zeros(1)
    tc = np.zeros(1)
    for g in instance.groups:
        tv = (tv[:, None] + g.values[None, :]).ravel()
        tc = (tc[:, None] + g.costs[None, :]).ravel()
    cand = np.flatnonzero(tc <= _effective_capacity(instance.capacity))
    if cand.size == 0:
        raise Infeasible("no selection fits the capacity")
    # row-major flat order is lexicographic order of the index tuples
    best = cand[np.lexsort((cand, tc[cand], -tv[cand]))[0]]
    positions = np.unravel_index(best, sizes)
    chosen = [g.labels[p] for g, p in zip(instance.groups, positions)]
    return _solution(instance, chosen)


def scale_costs(costs, scale: int) -> np.ndarray:
    """``floor(cost * scale)`` as integers.

    The product is rounded to 9 decimals before flooring so that decimal
    inputs such as 1.234 at scale 1000 map to 1234 rather than 1233.
    """
    scaled = np.round(np.asarray(costs, dtype=np.float64) * scale, 9)
    return np.floor(scaled).astype(np.int64)


def solve_dp(instance: MCKInstance, scale: int = 1, max_cells: int = DEFAULT_DP_CELLS) -> MCKSolution:
    """Dynamic programme over integer costs ``floor(c * scale)``.

    Optimal for the rounded instance; with ``scale = 10**d`` the cost side is
    exact to ``d`` decimals.  The reported ``total_cost`` uses the original
    (unscaled) costs.
    """
    if int(scale) != scale or scale < 1:
        raise ValueError("scale must be a positive integer")
    scale = int(scale)
    cap = int(scale_costs([instance.capacity], scale)[0])
    n_groups = len(instance.groups)
    if (cap + 1) * n_groups > max_cells:
        raise CapacityOverflow(
            f"scaled capacity {cap} x {n_groups} groups exceeds the table bound {max_cells}"
        )
    width = cap + 1
    best = np.full(width, -np.inf)
    best[0] = 0.0
    choice = np.full((n_groups, width), -1, dtype=np.int32)
    for g, group in enumerate(instance.groups):
        weights = scale_costs(group.costs, scale)
        nxt = np.full(width, -np.inf)
        row = choice[g]
        for i, (v, w) in enumerate(zip(group.values, weights)):
            if w > cap:
                continue
            cand = best[: width - w] + v
            tail = nxt[w:]
            better = cand > tail
            tail[better] = cand[better]
            row[w:][better] = i
        best = nxt
    finite = np.isfinite(best)
    if not finite.any():
        raise Infeasible("no selection fits the scaled capacity")
    top = best[finite].max()
    k = int(np.flatnonzero(best == top)[0])
    positions = [0] * n_groups
    for g in range(n_groups - 1, -1, -1):
        i = int(choice[g, k])
        positions[g] = i
        k -= int(scale_costs(instance.groups[g].costs[i : i + 1], scale)[0])
    chosen = [g.labels[p] for g, p in zip(instance.groups, positions)]
    return _solution(instance, chosen)
