"""End-to-end soft-mask pruning runs on a toy convolutional chain.

Training alternates SGD steps with periodic re-solves of the channel
allocation.  Masks only gate the computation, so a channel dropped by one
solve keeps training through the straight-through gradient and can be
brought back by a later solve.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .allocation import ChannelPlan, GroupPlan, build_groups, build_instance, plan_channels, min_cost_report
from .costs import full_cost, synth_lut
from .engine import ChainNet, taylor_importance
from .errors import ConfigError, Infeasible
from .schedule import ImportanceAccumulator, PruneSchedule, parse_target
from .topology import shared_input_sets, toy_chain_layers

__all__ = ["SimConfig", "SimResult", "make_blobs", "run_smcp", "rewire", "flip_counts", "trace_lines"]


@dataclass
class SimConfig:
    layers: list = None
    cost_model: object = None
    epochs: int = 10
    warmup: int = 2
    ramp: int = 3
    cooldown: int = 2
    rewire_every: int = 4
    target: str | float = "50%"
    seed: int = 0
    n_classes: int = 4
    samples: int = 256
    image_size: int = 8
    batch_size: int = 32
    lr: float = 0.05
    sgd_momentum: float = 0.9
    weight_decay: float = 5e-4
    importance_momentum: float = 0.9
    importance_drift: float = 0.0
    record_time: bool = False
    settle_iterations: int = 8

    def __post_init__(self):
        if self.layers is None:
            self.layers = toy_chain_layers(hw=self.image_size)
        if self.cost_model is None:
            self.cost_model = synth_lut(self.layers, seed=self.seed)
        if self.samples < self.batch_size or self.batch_size < 1:
            raise ConfigError("need samples >= batch_size >= 1")


@dataclass
class SimResult:
    trace: list
    plan: ChannelPlan
    net: ChainNet
    start_cost: float
    target: float
    accuracy: float
    losses: list = field(default_factory=list)
    mask_digests: list = field(default_factory=list)  # (epoch, step, digest) after every step


def make_blobs(n_classes: int, samples: int, channels: int, size: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Class-conditional Gaussian images around smooth random templates."""
    coarse = rng.normal(size=(n_classes, channels, 2, 2))
    templates = np.kron(coarse, np.ones((1, 1, (size + 1) // 2, (size + 1) // 2)))[:, :, :size, :size]
    labels = rng.integers(0, n_classes, samples)
    images = templates[labels] + rng.normal(scale=1.0, size=(samples, channels, size, size))
    return images, labels


def _chain_order(layers) -> list:
    for a, b in zip(layers, layers[1:]):
        if tuple(a.downstream_ids) != (b.id,) or a.c_out != b.c_in:
            raise ConfigError(f"simulation needs a plain chain; {a.id!r} does not feed {b.id!r}")
    if layers[-1].downstream_ids:
        raise ConfigError(f"last layer {layers[-1].id!r} must not have consumers")
    return layers


def flip_counts(old: dict, new: dict) -> tuple[int, int]:
    """Channels switched on (0 -> 1) and off (1 -> 0) between two mask sets."""
    on = off = 0
    for key, mask in new.items():
        before = old[key]
        on += int(np.sum(~before & mask))
        off += int(np.sum(before & ~mask))
    return on, off


def _full_plan(groups, layers, cost_model, target) -> ChannelPlan:
    cost = full_cost(layers, cost_model)
    plans = [
        GroupPlan(g.name, g.layer_ids, g.c_in, np.ones(g.c_in, dtype=bool), float(g.summed_importance.sum()), float("nan"))
        for g in groups
    ]
    return ChannelPlan(plans, cost, target, cost, math.fsum(p.importance for p in plans))


def rewire(layers, importance: dict, cost_model, target: float, current_kept: dict | None, settle: int = 8):
    """Solve for new masks at ``target``.

    Costs are decoupled by assuming consumers keep their current counts.  The
    solve is repeated with the new counts until they stop changing (at most
    ``settle`` times), so the returned plan's realized cost usually equals its
    decoupled cost.  If ``target`` is below the cheapest plan under the
    current counts, the target is raised to that minimum; the effective
    target is returned alongside the plan.
    """
    sets = shared_input_sets(layers)
    kept = current_kept
    effective = target
    plan = None
    for _ in range(max(1, settle)):
        groups = build_groups(layers, sets, importance, kept)
        encoding = build_instance(groups, layers, cost_model, effective)
        floor, _ = min_cost_report(encoding)
        effective = max(effective, floor)
        plan = plan_channels(layers, groups, cost_model, effective)
        if kept is not None and plan.kept() == kept:
            break
        kept = plan.kept()
    return plan, effective


def _drift(scores: np.ndarray, progress: float, amount: float) -> np.ndarray:
    # early on favor low channel indices, late favor high ones
    if amount == 0.0 or scores.size < 2:
        return scores
    lin = np.linspace(0.0, 1.0, scores.size)
    return scores + amount * ((1.0 - progress) * (1.0 - lin) + progress * lin)


def _digest(net) -> str:
    h = hashlib.sha256()
    for conv in net.convs:
        h.update(conv.mask.tobytes())
    return h.hexdigest()[:16]


def run_smcp(config: SimConfig) -> SimResult:
    """Train, prune on schedule, fine-tune with frozen masks, then hard-prune."""
    layers = _chain_order(list(config.layers))
    model = config.cost_model
    rng = np.random.default_rng(config.seed)
    start = full_cost(layers, model)
    target = parse_target(config.target, start)
    schedule = PruneSchedule(
        config.epochs, config.warmup, config.ramp, config.cooldown, config.rewire_every, start, target
    )

    widths = [layers[0].c_in] + [layer.c_out for layer in layers]
    net = ChainNet(widths, config.n_classes, [layer.kernel for layer in layers], rng)
    conv_of = {layer.id: conv for layer, conv in zip(layers, net.convs)}
    bn_of = {layer.id: bn for layer, bn in zip(layers, net.bns)}
    x_all, y_all = make_blobs(config.n_classes, config.samples, widths[0], config.image_size, rng)

    sets = shared_input_sets(layers)
    prunable = [layer for layer in layers if not layer.frozen]
    acc = ImportanceAccumulator([layer.c_in for layer in prunable], config.importance_momentum)

    # the final target must be reachable with every group at its smallest count
    lowest = {layer.id: layer.permitted[0] for layer in layers}
    floor = math.fsum(
        model.cost(layer, lowest[layer.id], lowest[layer.downstream_ids[0]] if layer.downstream_ids else layer.c_out)
        for layer in layers
    )
    if target < floor:
        raise Infeasible(f"target {target:.6g} is below the minimum achievable cost {floor:.6g}")

    masks = {layer.id: np.ones(layer.c_in, dtype=bool) for layer in layers}
    kept = None
    plan = None
    trace, losses, digests = [], [], []
    steps_per_epoch = config.samples // config.batch_size
    window_steps = (schedule.prune_end - schedule.warmup) * steps_per_epoch
    window_step = 0
    velocity = {id(p): np.zeros_like(p.data) for p in net.params()}

    for epoch in range(config.epochs):
        order = rng.permutation(config.samples)
        pruning = schedule.warmup <= epoch < schedule.prune_end
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            loss = net.forward(x_all[idx], y_all[idx])
            net.backward()
            losses.append(loss)
            if pruning:
                window_step += 1
                progress = window_step / window_steps
                acc.accumulate(
                    [_drift(taylor_importance(conv_of[layer.id]), progress, config.importance_drift) for layer in prunable]
                )
            for p in net.params():
                grad = p.grad
                if p.name.endswith(".weight") and "conv" in p.name:
                    grad = grad + config.weight_decay * p.data
                v = velocity[id(p)]
                v *= config.sgd_momentum
                v += grad
                p.data = p.data - config.lr * v
            if pruning and schedule.should_rewire(window_step, epoch):
                scheduled = schedule.intermediate_target(epoch)
                importance = {layer.id: s for layer, s in zip(prunable, acc.read())}
                t0 = time.perf_counter()
                if scheduled >= start:
                    grp = build_groups(layers, sets, importance, kept)
                    new_plan, effective = _full_plan(grp, layers, model, scheduled), scheduled
                else:
                    new_plan, effective = rewire(layers, importance, model, scheduled, kept, config.settle_iterations)
                elapsed = time.perf_counter() - t0
                new_masks = {lid: np.asarray(m, dtype=bool) for lid, m in new_plan.layer_masks().items()}
                on, off = flip_counts(masks, new_masks)
                masks = new_masks
                for lid, m in masks.items():
                    conv_of[lid].set_mask(m.astype(np.float64))
                    bn_of[lid].rescale(m)
                acc.reset()
                kept = new_plan.kept()
                plan = new_plan
                record = {
                    "epoch": epoch,
                    "step": window_step,
                    "phase": schedule.phase(epoch),
                    "scheduled_target": scheduled,
                    "target": effective,
                    "plan_cost": new_plan.total_cost,
                    "realized_cost": new_plan.realized_cost,
                    "kept": kept,
                    "flips_on": on,
                    "flips_off": off,
                }
                if config.record_time:
                    record["solve_ms"] = elapsed * 1e3
                trace.append(record)
            digests.append((epoch, b, _digest(net)))

    if plan is None:
        groups = build_groups(layers, sets, {layer.id: np.zeros(layer.c_in) for layer in prunable}, None)
        plan = _full_plan(groups, layers, model, target)
    for conv in net.convs:
        conv.apply_mask_permanently()

    net.forward(x_all, y_all)
    accuracy = float(np.mean(net.logits.argmax(axis=1) == y_all))
    return SimResult(trace, plan, net, start, target, accuracy, losses, digests)


def trace_lines(trace) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace)


def write_outputs(result: SimResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(trace_lines(result.trace))
    result.plan.save(out / "plan.json")
    summary = {
        "start_cost": result.start_cost,
        "target": result.target,
        "final_cost": result.plan.total_cost,
        "final_realized_cost": result.plan.realized_cost,
        "rewires": len(result.trace),
        "flips_on": sum(r["flips_on"] for r in result.trace),
        "flips_off": sum(r["flips_off"] for r in result.trace),
        "train_accuracy": result.accuracy,
        "final_loss": result.losses[-1] if result.losses else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary
