"""Pruning schedule and importance accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatch

__all__ = ["PruneSchedule", "geometric_targets", "ImportanceAccumulator", "parse_target"]


def geometric_targets(start: float, target: float, progress: float) -> float:
    """Interpolate geometrically from ``start`` (progress 0) to ``target`` (progress 1)."""
    progress = min(1.0, max(0.0, progress))
    if progress == 1.0:
        return target
    return start * (target / start) ** progress


@dataclass(frozen=True)
class PruneSchedule:
    """Epoch layout of a pruning run.

    Epochs ``[0, warmup)`` train densely, masks are recomputed every
    ``rewire_every`` steps during ``[warmup, epochs - cooldown)`` and stay
    fixed for the last ``cooldown`` epochs.  The cost target decays from
    ``start_cost`` to ``target_cost`` over the ``ramp`` epochs after warmup
    and holds afterwards.
    """

    epochs: int
    warmup: int
    ramp: int
    cooldown: int
    rewire_every: int
    start_cost: float
    target_cost: float
    policy: Callable[[float, float, float], float] = field(default=geometric_targets, compare=False)

    def __post_init__(self):
        if min(self.epochs, self.warmup, self.ramp, self.cooldown) < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.warmup + self.ramp > self.epochs - self.cooldown:
            raise ConfigError(
                f"warmup ({self.warmup}) + ramp ({self.ramp}) must fit before the cooldown "
                f"starts at epoch {self.epochs - self.cooldown}"
            )
        if self.rewire_every < 1:
            raise ConfigError("rewire_every must be >= 1")
        if not 0 < self.target_cost <= self.start_cost:
            raise ConfigError(
                f"need 0 < target cost ({self.target_cost}) <= start cost ({self.start_cost})"
            )

    @property
    def prune_end(self) -> int:
        return self.epochs - self.cooldown

    def phase(self, epoch: int) -> str:
        if epoch < self.warmup:
            return "warmup"
        if epoch < self.warmup + self.ramp:
            return "ramp"
        if epoch < self.prune_end:
            return "refine"
        return "cooldown"

    def intermediate_target(self, epoch: int) -> float:
        if epoch < self.warmup:
            return self.start_cost
        if self.ramp == 0:
            return self.target_cost
        progress = (epoch - self.warmup + 1) / self.ramp
        return self.policy(self.start_cost, self.target_cost, progress)

    def should_rewire(self, step: int, epoch: int) -> bool:
        """``step`` counts training steps completed since the pruning window opened."""
        if not self.warmup <= epoch < self.prune_end:
            return False
        return step > 0 and step % self.rewire_every == 0

    def rewire_count(self, steps_per_epoch: int) -> int:
        return (self.prune_end - self.warmup) * steps_per_epoch // self.rewire_every


def parse_target(text: str, start_cost: float) -> float:
    """``"30%"`` is relative to ``start_cost``; a bare number is absolute."""
    text = str(text).strip()
    try:
        if text.endswith("%"):
            return start_cost * float(text[:-1]) / 100.0
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse cost target {text!r}") from exc


class ImportanceAccumulator:
    """Exponential moving average of per-group importance vectors.

    ``running <- momentum * running + (1 - momentum) * sample``.  Readers get
    a snapshot; updates swap in a fresh list, so a read never sees half of an
    update.
    """

    def __init__(self, shapes: Sequence[int], momentum: float = 0.9):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        self.momentum = float(momentum)
        self.shapes = tuple(int(s) for s in shapes)
        self._running = [np.zeros(s) for s in self.shapes]
        self.steps_since_reset = 0

    def accumulate(self, samples: Sequence[np.ndarray]) -> None:
        if len(samples) != len(self.shapes):
            raise ShapeMismatch(f"expected {len(self.shapes)} vectors, got {len(samples)}")
        mu = self.momentum
        updated = []
        for old, sample, shape in zip(self._running, samples, self.shapes):
            sample = np.asarray(sample, dtype=np.float64)
            if sample.shape != (shape,):
                raise ShapeMismatch(f"sample of shape {sample.shape}, expected ({shape},)")
            updated.append(mu * old + (1.0 - mu) * sample)
        self._running = updated
        self.steps_since_reset += 1

    def read(self) -> list:
        return [r.copy() for r in self._running]

    def reset(self) -> None:
        self._running = [np.zeros(s) for s in self.shapes]
        self.steps_since_reset = 0
