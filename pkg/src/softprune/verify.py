"""Self-check suites runnable from the command line.

Each suite returns a report ``{"suite", "passed", "checks": [...]}`` where
every check has a name, a pass flag and some numbers worth looking at.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .allocation import build_groups, plan_channels
from .costs import FlopsModel, synth_lut
from .engine import (
    ChainNet,
    SkipNet,
    bn_taylor_residual,
    finite_difference_errors,
    gradient_probe,
    masked_as_dense,
)
from .errors import Infeasible
from .mck import MCKInstance, solve_brute_force, solve_dp, solve_mim
from .schedule import PruneSchedule
from .topology import LayerSpec, shared_input_sets

__all__ = ["SUITES", "run_suite", "random_instance", "random_toy_problem", "exhaustive_plan_value"]


def random_instance(rng, max_groups: int = 5, max_items: int = 6, decimals: int | None = None, integer: bool = False):
    """A random MCK instance whose capacity sits between its min and max total cost."""
    n = int(rng.integers(1, max_groups + 1))
    values, costs = [], []
    for _ in range(n):
        k = int(rng.integers(1, max_items + 1))
        if integer:
            values.append(rng.integers(0, 20, k).astype(float))
            costs.append(rng.integers(0, 20, k).astype(float))
        else:
            values.append(rng.uniform(0, 10, k))
            c = rng.uniform(0, 10, k)
            costs.append(np.round(c, decimals) if decimals is not None else c)
    lo = sum(c.min() for c in costs)
    hi = sum(c.max() for c in costs)
    capacity = float(rng.uniform(lo, hi))
    if decimals is not None:
        capacity = round(capacity, decimals)
    return MCKInstance.from_lists(values, costs, capacity)


def random_toy_problem(rng, multiple: int = 4):
    """Three chained layers with random widths, importances and FLOPs costs."""
    widths = [int(rng.integers(1, 4)) * multiple + int(rng.integers(0, 2)) * 2 for _ in range(4)]
    layers = []
    for k in range(3):
        permitted = tuple(sorted(set(range(multiple, widths[k] + 1, multiple)) | {widths[k]}))
        downstream = (f"l{k + 1}",) if k < 2 else ()
        layers.append(LayerSpec(f"l{k}", widths[k], widths[k + 1], 3, downstream, permitted, None, (4, 4)))
    importance = {layer.id: rng.exponential(1.0, layer.c_in) for layer in layers}
    model = FlopsModel(unit=1e3)
    full = sum(model.cost(layer, layer.c_in, layer.c_out) for layer in layers)
    target = float(rng.uniform(0.2, 1.0)) * full
    return layers, importance, model, target


def exhaustive_plan_value(layers, importance, model, target):
    """Best kept-importance total over all permitted-count tuples (decoupled costs)."""
    by_id = {layer.id: layer for layer in layers}
    prefix = {
        layer.id: np.concatenate(([0.0], np.cumsum(np.sort(importance[layer.id])[::-1]))) for layer in layers
    }
    best = -math.inf
    for counts in itertools.product(*(layer.permitted for layer in layers)):
        kept = dict(zip(by_id, counts))
        # consumers at full width, as in a first solve
        cost = math.fsum(model.cost(layer, kept[layer.id], layer.c_out) for layer in layers)
        if cost <= target:
            best = max(best, math.fsum(prefix[lid][k] for lid, k in kept.items()))
    return best


def _check(name, passed, **detail):
    return {"name": name, "passed": bool(passed), **detail}


def suite_mck(n: int = 1000, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    mismatches = infeasible_agree = 0
    t0 = time.perf_counter()
    for _ in range(n):
        inst = random_instance(rng)
        try:
            a = solve_mim(inst)
        except Infeasible:
            a = None
        try:
            b = solve_brute_force(inst)
        except Infeasible:
            b = None
        if a is None or b is None:
            infeasible_agree += a is None and b is None
            mismatches += (a is None) != (b is None)
            continue
        mismatches += a.total_value != b.total_value
    checks = [_check("mim_vs_brute_force", mismatches == 0, instances=n, mismatches=mismatches,
                     seconds=time.perf_counter() - t0)]
    mismatches = 0
    for _ in range(max(1, n // 5)):
        inst = random_instance(rng, decimals=3)
        mismatches += solve_dp(inst, scale=1000).total_value != solve_mim(inst).total_value
    checks.append(_check("dp_vs_mim", mismatches == 0, instances=max(1, n // 5), mismatches=mismatches))
    return checks


def suite_micrograd(n: int = 100, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(n):
        widths = [int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9))]
        net = ChainNet(widths, 3, [int(rng.choice([1, 3])), int(rng.choice([1, 3]))], rng)
        hw = int(rng.integers(2, 7))
        x = rng.normal(size=(int(rng.integers(2, 5)), widths[0], hw, hw))
        net.forward(x, rng.integers(0, 3, x.shape[0]))
        net.backward()
        res, scale = bn_taylor_residual(net.bns[0], net.convs[1])
        worst = max(worst, res / max(scale, 1e-300))
    skip = SkipNet(rng=rng)
    x = rng.normal(size=(4, 3, 5, 5))
    skip.forward(x, rng.integers(0, 3, 4))
    skip.backward()
    res, scale = bn_taylor_residual(skip.branch_bns, skip.consumers)
    skip_rel = res / scale
    checks = [
        _check("bn_taylor_chain", worst <= 1e-5, nets=n, worst_relative=worst, seconds=time.perf_counter() - t0),
        _check("bn_taylor_skip", skip_rel <= 1e-5, relative=skip_rel),
    ]
    fd_worst = 0.0
    for _ in range(3):
        net = ChainNet([3, 4, 5], 3, [3, 1], rng)
        net.convs[1].set_mask((rng.random(4) < 0.5).astype(float))
        net.convs[1] = masked_as_dense(net.convs[1])
        x = rng.normal(size=(3, 3, 4, 4))
        errors = finite_difference_errors(net, x, rng.integers(0, 3, 3))
        fd_worst = max(fd_worst, max(errors.values()))
    checks.append(_check("finite_differences", fd_worst <= 1e-4, worst_relative=fd_worst))
    probe = gradient_probe(0.25, seed=seed)
    checks.append(_check("bn_scaling_direction", probe["scaled_gz"] < probe["unscaled_gz"], **probe))
    degenerate = gradient_probe(0.0, seed=seed, eps=0.0)
    checks.append(_check(
        "bn_scaling_layer_pruned",
        degenerate["scaled_finite"] and not degenerate["unscaled_finite"],
        **degenerate,
    ))
    return checks


def suite_schedule() -> list:
    sched = PruneSchedule(90, 10, 30, 45, 80, 100.0, 25.0)
    targets = [sched.intermediate_target(e) for e in range(sched.warmup, sched.epochs)]
    ramp = targets[: sched.ramp]
    checks = [
        _check("monotone", all(a >= b for a, b in zip(targets, targets[1:]))),
        _check("strict_on_ramp", all(a > b for a, b in zip(ramp, ramp[1:]))),
        _check("first_below_start", targets[0] < sched.start_cost, first=targets[0]),
        _check("endpoint_exact", all(t == sched.target_cost for t in targets[sched.ramp :])),
    ]
    short = PruneSchedule(6, 1, 2, 1, 3, 100.0, 25.0)
    checks.append(_check(
        "geometric_example",
        math.isclose(short.intermediate_target(1), 50.0) and short.intermediate_target(2) == 25.0,
    ))
    spe = 7
    count = sum(
        short.should_rewire(s, 1 + (s - 1) // spe) for s in range(1, (short.prune_end - short.warmup) * spe + 1)
    )
    checks.append(_check("rewire_count", count == short.rewire_count(spe), count=count))
    return checks


def suite_allocation(n: int = 100, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n):
        layers, importance, model, target = random_toy_problem(rng)
        expected = exhaustive_plan_value(layers, importance, model, target)
        groups = build_groups(layers, shared_input_sets(layers), importance)
        try:
            got = plan_channels(layers, groups, model, target).total_importance
        except Infeasible:
            got = -math.inf
        mismatches += got != expected
    checks = [_check("encoder_vs_exhaustive", mismatches == 0, cases=n, mismatches=mismatches)]
    layers = [LayerSpec("a", 16, 16, 1, ("b",), (8, 16)), LayerSpec("b", 16, 8, 1, (), (8, 16))]
    lut = synth_lut(layers, seed=seed)
    groups = build_groups(layers, shared_input_sets(layers), {"a": np.ones(16), "b": np.ones(16)})
    plan = plan_channels(layers, groups, lut, 1e9)
    checks.append(_check("full_target_full_width", plan.kept() == {"a": 16, "b": 16}))
    return checks


SUITES = {
    "mck": suite_mck,
    "micrograd": suite_micrograd,
    "schedule": suite_schedule,
    "allocation": suite_allocation,
}


def run_suite(name: str) -> dict:
    names = list(SUITES) if name == "all" else [name]
    checks = []
    for suite in names:
        for check in SUITES[suite]():
            checks.append({"suite": suite, **check})
    return {"suite": name, "passed": all(c["passed"] for c in checks), "checks": checks}
