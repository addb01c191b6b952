"""Encode channel pruning as an MCK instance and decode the solution.

For every group of layers sharing input channels the options are the
permitted kept counts ``j``.  Choosing ``j`` keeps the ``j`` most important
channels, is worth the sum of their importances and costs the member layers'
latency at ``j`` inputs and the *current* kept count of their consumers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, Infeasible, MissingImportance, ShapeMismatch
from .mck import ItemGroup, MCKInstance, MCKSolution, solve_mim

__all__ = [
    "PruneGroup",
    "GroupPlan",
    "ChannelPlan",
    "Encoding",
    "build_groups",
    "build_instance",
    "select_masks",
    "top_mask",
    "plan_channels",
    "min_cost_report",
    "load_importance",
    "save_importance",
]


@dataclass
class PruneGroup:
    name: str
    layer_ids: tuple
    c_in: int
    summed_importance: np.ndarray
    permitted: tuple
    current_kept: int

    def prefix_values(self) -> np.ndarray:
        """``v[j]`` = total importance of the ``j`` most important channels."""
        ordered = self.summed_importance[_rank(self.summed_importance)]
        return np.concatenate(([0.0], np.cumsum(ordered)))


def _rank(importance: np.ndarray) -> np.ndarray:
    # descending importance, ties to the lower channel index
    return np.lexsort((np.arange(importance.size), -importance))


def top_mask(importance: np.ndarray, kept: int) -> np.ndarray:
    mask = np.zeros(importance.size, dtype=bool)
    mask[_rank(importance)[:kept]] = True
    return mask


def _check_importance(layer_id, scores, c_in) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size != c_in:
        raise ShapeMismatch(f"layer {layer_id!r}: {scores.size} scores for {c_in} input channels")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0):
        raise ValueError(f"layer {layer_id!r}: importances must be finite and nonnegative")
    return scores


def build_groups(
    layers: Sequence,
    shared_input_sets: Sequence[Sequence[str]],
    importance: Mapping[str, np.ndarray],
    current_kept: Mapping[str, int] | None = None,
) -> list:
    """One :class:`PruneGroup` per shared-input set.

    Group importance is the elementwise sum over members and the permitted
    counts are the union of the members' sets.  Frozen groups (every member
    pinned to its full width) may omit importances.  ``current_kept`` maps
    group names to the kept counts of the previous plan; by default every
    group is at full width.
    """
    by_id = {layer.id: layer for layer in layers}
    seen: set = set()
    groups = []
    for ids in shared_input_sets:
        ids = tuple(ids)
        if not ids:
            raise ConfigError("empty shared-input set")
        for layer_id in ids:
            if layer_id not in by_id:
                raise ConfigError(f"unknown layer {layer_id!r} in shared-input set")
            if layer_id in seen:
                raise ConfigError(f"layer {layer_id!r} appears in more than one shared-input set")
            seen.add(layer_id)
        members = [by_id[i] for i in ids]
        c_in = members[0].c_in
        if any(m.c_in != c_in for m in members):
            raise ShapeMismatch(f"layers {ids} share inputs but disagree on c_in")
        permitted = tuple(sorted(set().union(*(m.permitted for m in members))))
        frozen = permitted == (c_in,)
        total = np.zeros(c_in)
        for m in members:
            if m.id in importance:
                total += _check_importance(m.id, importance[m.id], c_in)
            elif not frozen:
                raise MissingImportance(f"no importance scores for layer {m.id!r}")
        name = members[0].group_name
        kept = c_in if current_kept is None else int(current_kept.get(name, c_in))
        groups.append(PruneGroup(name, ids, c_in, total, permitted, kept))
    missing = set(by_id) - seen
    if missing:
        raise ConfigError(f"layers not assigned to any shared-input set: {sorted(missing)}")
    return groups


def _downstream_counts(layers, groups) -> dict:
    """Current output-channel count of every layer (its consumers' kept count)."""
    group_of = {lid: g for g in groups for lid in g.layer_ids}
    out = {}
    for layer in layers:
        consumers = [group_of[d] for d in layer.downstream_ids if d in group_of]
        # consumers of one tensor normally share a group; if not, keep what
        # any of them still reads
        out[layer.id] = max((g.current_kept for g in consumers), default=layer.c_out)
    return out


def _group_costs(group, members, p_out, cost_model, counts) -> np.ndarray:
    return np.array(
        [math.fsum(cost_model.cost(m, j, p_out[m.id]) for m in members) for j in counts]
    )


@dataclass
class Encoding:
    """An MCK instance plus what is needed to map a solution back to layers."""

    instance: MCKInstance
    groups: list
    counts: list  # per group: kept count of each MCK item
    p_out: dict  # per layer: output count assumed when costing
    fixed_cost: float
    target: float


def build_instance(groups, layers, cost_model, target: float, fixed_cost: float = 0.0) -> Encoding:
    """Encode the pruning problem at cost target ``target``.

    ``fixed_cost`` covers work outside the pruned layers and is subtracted
    from the capacity.  Costs use each member layer's consumers at their
    current kept counts.
    """
    by_id = {layer.id: layer for layer in layers}
    p_out = _downstream_counts(layers, groups)
    capacity = target - fixed_cost
    if capacity < 0:
        raise Infeasible(f"fixed cost {fixed_cost} already exceeds the target {target}")
    items, counts = [], []
    for g in groups:
        members = [by_id[i] for i in g.layer_ids]
        options = np.array(g.permitted, dtype=np.int64)
        values = g.prefix_values()[options]
        costs = _group_costs(g, members, p_out, cost_model, options)
        items.append(ItemGroup(values, costs))
        counts.append(options)
    return Encoding(MCKInstance(tuple(items), capacity), list(groups), counts, p_out, fixed_cost, target)


@dataclass
class GroupPlan:
    name: str
    layer_ids: tuple
    kept: int
    mask: np.ndarray
    importance: float
    cost: float


@dataclass
class ChannelPlan:
    """Kept counts and masks per group.

    ``total_cost`` is the cost under which the plan was chosen: each layer at
    its new input count and its consumers' previous count.  ``realized_cost``
    uses the new counts on both sides.
    """

    groups: list
    total_cost: float
    target: float
    realized_cost: float = float("nan")
    total_importance: float = 0.0
    extra: dict = field(default_factory=dict)

    def kept(self) -> dict:
        return {g.name: g.kept for g in self.groups}

    def layer_masks(self) -> dict:
        return {lid: g.mask for g in self.groups for lid in g.layer_ids}

    def to_json(self) -> dict:
        return {
            "groups": [
                {
                    "group": g.name,
                    "layers": list(g.layer_ids),
                    "kept": int(g.kept),
                    "mask": [int(b) for b in g.mask],
                }
                for g in self.groups
            ],
            "total_cost_ms": self.total_cost,
            "target_ms": self.target,
            "realized_cost_ms": self.realized_cost,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def select_masks(solution: MCKSolution, encoding: Encoding, layers, cost_model) -> ChannelPlan:
    """Turn an MCK solution into per-group channel masks."""
    by_id = {layer.id: layer for layer in layers}
    plans = []
    new_kept = {}
    for g, label, counts in zip(encoding.groups, solution.chosen, encoding.counts):
        kept = int(counts[label])
        if kept not in g.permitted:
            raise ShapeMismatch(f"group {g.name!r}: count {kept} not permitted")
        members = [by_id[i] for i in g.layer_ids]
        cost = _group_costs(g, members, encoding.p_out, cost_model, [kept])[0]
        value = g.prefix_values()[kept]
        plans.append(GroupPlan(g.name, g.layer_ids, kept, top_mask(g.summed_importance, kept), value, cost))
        new_kept[g.name] = kept
    total = math.fsum(p.cost for p in plans) + encoding.fixed_cost
    realized = _realized_cost(layers, encoding.groups, new_kept, cost_model) + encoding.fixed_cost
    return ChannelPlan(
        plans,
        total,
        encoding.target,
        realized,
        math.fsum(p.importance for p in plans),
    )


def _realized_cost(layers, groups, kept: Mapping[str, int], cost_model) -> float:
    group_of = {lid: g.name for g in groups for lid in g.layer_ids}
    total = []
    for layer in layers:
        p_in = kept[group_of[layer.id]]
        outs = [kept[group_of[d]] for d in layer.downstream_ids if d in group_of]
        p_out = max(outs, default=layer.c_out)
        total.append(cost_model.cost(layer, p_in, p_out))
    return math.fsum(total)


def min_cost_report(encoding: Encoding, top: int = 5) -> tuple[float, list]:
    """Cheapest reachable cost and the groups contributing most to it."""
    mins = [(float(item.costs.min()), g.name) for item, g in zip(encoding.instance.groups, encoding.groups)]
    total = math.fsum(c for c, _ in mins) + encoding.fixed_cost
    mins.sort(key=lambda t: -t[0])
    return total, [name for _, name in mins[:top]]


def plan_channels(layers, groups, cost_model, target: float, fixed_cost: float = 0.0, solver=solve_mim) -> ChannelPlan:
    """Encode, solve and decode in one call.

    On infeasibility the raised message names the groups with the largest
    minimum cost.
    """
    encoding = build_instance(groups, layers, cost_model, target, fixed_cost)
    try:
        solution = solver(encoding.instance)
    except Infeasible as exc:
        floor, binding = min_cost_report(encoding)
        raise Infeasible(
            f"target {target:.6g} is below the minimum achievable cost {floor:.6g}; "
            f"largest minimum-cost groups: {', '.join(binding)}"
        ) from exc
    return select_masks(solution, encoding, layers, cost_model)


def load_importance(path) -> dict:
    """Read ``{"layers": [{"id": ..., "scores": [...]}]}``."""
    try:
        obj = json.loads(Path(path).read_text())
        return {str(e["id"]): np.asarray(e["scores"], dtype=np.float64) for e in obj["layers"]}
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read importance file {path}: {exc}") from exc


def save_importance(importance: Mapping[str, np.ndarray], path) -> None:
    obj = {"layers": [{"id": k, "scores": np.asarray(v).tolist()} for k, v in importance.items()]}
    Path(path).write_text(json.dumps(obj) + "\n")
