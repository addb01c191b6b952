"""Layer-wise cost functions: latency lookup tables and a FLOPs model.

A cost model answers ``cost(layer, p_in, p_out)`` for a :class:`LayerSpec`
with ``p_in`` kept input channels and ``p_out`` kept output channels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, LUTMiss

__all__ = ["CostLUT", "FlopsModel", "flops_cost", "synth_lut", "full_cost"]


@dataclass
class CostLUT:
    """Measured latency per layer, keyed by ``(p_in, p_out)``.

    Lookups are exact; a missing entry raises :class:`LUTMiss`.  A layer with
    no input or no output channels costs nothing unless the table says
    otherwise.
    """

    tables: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def lut_cost(self, layer_id: str, p_in: int, p_out: int) -> float:
        table = self.tables.get(layer_id)
        key = (int(p_in), int(p_out))
        if table is not None and key in table:
            return table[key]
        if key[0] == 0 or key[1] == 0:
            return 0.0
        raise LUTMiss(layer_id, p_in, p_out)

    def cost(self, layer, p_in: int, p_out: int) -> float:
        return self.lut_cost(layer.id, p_in, p_out)

    def to_json(self) -> dict:
        return {
            "meta": dict(self.meta),
            "layers": [
                {
                    "id": layer_id,
                    "rows": [
                        {"p_in": p_in, "p_out": p_out, "ms": ms}
                        for (p_in, p_out), ms in sorted(table.items())
                    ],
                }
                for layer_id, table in self.tables.items()
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CostLUT":
        tables = {}
        try:
            for entry in obj["layers"]:
                table = {}
                for row in entry["rows"]:
                    ms = float(row["ms"])
                    if not ms >= 0 or not math.isfinite(ms):
                        raise ConfigError(f"negative or non-finite latency in layer {entry['id']!r}")
                    table[(int(row["p_in"]), int(row["p_out"]))] = ms
                tables[str(entry["id"])] = table
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed LUT: {exc}") from exc
        return cls(tables, dict(obj.get("meta", {})))

    @classmethod
    def load(cls, path) -> "CostLUT":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read LUT {path}: {exc}") from exc
        return cls.from_json(obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")


def flops_cost(layer, p_in: int, p_out: int) -> int:
    """Dense convolution FLOPs, counting a multiply-add as two operations."""
    h, w = layer.out_hw
    return 2 * int(p_in) * int(p_out) * layer.kernel * layer.kernel * h * w


@dataclass(frozen=True)
class FlopsModel:
    """FLOPs as a cost, divided by ``unit`` (1e9 reports GFLOPs)."""

    unit: float = 1.0

    def cost(self, layer, p_in: int, p_out: int) -> float:
        return flops_cost(layer, p_in, p_out) / self.unit


def _counts(width: int, step: int) -> list:
    return sorted(set(range(step, width + 1, step)) | {width})


def synth_lut(
    layers,
    seed: int = 0,
    cliff_period: int = 8,
    step: int = 1,
    total_ms: float = 100.0,
    batch: int = 256,
) -> CostLUT:
    """A deterministic latency table with tensor-core style steps.

    Latency is proportional to ``ceil(p_in / P) * ceil(p_out / P)`` times the
    layer's spatial work, so it is flat on blocks ``P*k+1 .. P*k+P`` and jumps
    at multiples of ``P``.  Each layer gets a random efficiency factor and a
    small fixed overhead.  Entries cover every multiple of ``step`` plus the
    full width, and the unpruned network sums to ``total_ms``.
    """
    rng = np.random.default_rng(seed)
    period = int(cliff_period)
    raw = {}
    for layer in layers:
        h, w = layer.out_hw
        work = layer.kernel * layer.kernel * h * w
        factor = rng.uniform(0.6, 1.4)
        overhead = rng.uniform(0.0, 0.05)
        p_ins = _counts(layer.c_in, step)
        p_outs = _counts(layer.c_out, step)
        blocks_in = np.ceil(np.array(p_ins) / period) * period
        blocks_out = np.ceil(np.array(p_outs) / period) * period
        grid = factor * work * np.outer(blocks_in, blocks_out)
        raw[layer.id] = (p_ins, p_outs, grid, overhead * work * layer.c_in * layer.c_out)
    full = sum(grid[-1, -1] + ovh for _, _, grid, ovh in raw.values())
    unit = total_ms / full
    tables = {}
    for layer_id, (p_ins, p_outs, grid, ovh) in raw.items():
        ms = (grid + ovh) * unit
        tables[layer_id] = {
            (p_in, p_out): float(ms[a, b]) for a, p_in in enumerate(p_ins) for b, p_out in enumerate(p_outs)
        }
    meta = {"batch": batch, "device": "synthetic", "seed": seed, "cliff_period": period}
    return CostLUT(tables, meta)


def full_cost(layers, cost_model) -> float:
    """Cost of the unpruned network."""
    return math.fsum(cost_model.cost(layer, layer.c_in, layer.c_out) for layer in layers)
