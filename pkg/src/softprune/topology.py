"""Layer descriptions, topology files and a few reference networks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

__all__ = [
    "LayerSpec",
    "permitted_multiples",
    "layer_permitted",
    "shared_input_sets",
    "load_topology",
    "save_topology",
    "topology_to_json",
    "resnet50_layers",
    "toy_chain_layers",
]


@dataclass(frozen=True)
class LayerSpec:
    """One prunable convolution (or linear) layer.

    ``permitted`` lists the allowed kept input-channel counts.  ``group``
    names the shared-input set the layer belongs to; layers in one set are
    masked identically.  ``out_hw`` is only needed for the FLOPs cost model.
    """

    id: str
    c_in: int
    c_out: int
    kernel: int = 1
    downstream_ids: tuple = ()
    permitted: tuple = ()
    group: str | None = None
    out_hw: tuple = (1, 1)

    def __post_init__(self):
        if self.c_in < 1 or self.c_out < 1 or self.kernel < 1:
            raise ConfigError(f"layer {self.id!r}: c_in, c_out and kernel must be positive")
        object.__setattr__(self, "downstream_ids", tuple(self.downstream_ids))
        object.__setattr__(self, "out_hw", tuple(int(v) for v in self.out_hw))
        permitted = tuple(sorted(set(int(p) for p in self.permitted))) or (self.c_in,)
        if permitted[0] < 0 or permitted[-1] > self.c_in:
            raise ConfigError(f"layer {self.id!r}: permitted counts must lie in [0, {self.c_in}]")
        object.__setattr__(self, "permitted", permitted)

    @property
    def group_name(self) -> str:
        return self.group if self.group is not None else self.id

    @property
    def frozen(self) -> bool:
        return self.permitted == (self.c_in,)


def permitted_multiples(c_in: int, multiple: int = 8, allow_zero: bool = False) -> tuple:
    """Positive multiples of ``multiple`` up to ``c_in``, plus 0 if allowed."""
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    counts = list(range(multiple, c_in + 1, multiple))
    if allow_zero:
        counts.insert(0, 0)
    return tuple(counts)


def layer_permitted(c_in: int, multiple: int = 8, allow_zero: bool = False) -> tuple:
    """Hardware-friendly counts with the unpruned width always included."""
    return tuple(sorted(set(permitted_multiples(c_in, multiple, allow_zero)) | {c_in}))


def shared_input_sets(layers) -> list:
    """Group layer ids by shared-input set, in order of first appearance."""
    sets: dict = {}
    for layer in layers:
        sets.setdefault(layer.group_name, []).append(layer.id)
    return list(sets.values())


def _layer_from_json(obj: dict, multiple: int, allow_zero: bool) -> LayerSpec:
    try:
        c_in = int(obj["c_in"])
        if "permitted" in obj:
            permitted = obj["permitted"]
        elif obj.get("frozen", False):
            permitted = (c_in,)
        else:
            permitted = layer_permitted(c_in, multiple, allow_zero)
        return LayerSpec(
            id=str(obj["id"]),
            c_in=c_in,
            c_out=int(obj["c_out"]),
            kernel=int(obj.get("kernel", 1)),
            downstream_ids=tuple(obj.get("downstream", ())),
            permitted=tuple(permitted),
            group=obj.get("shared_input_group"),
            out_hw=tuple(obj.get("out_hw", (1, 1))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad layer entry {obj!r}: {exc}") from exc


def load_topology(path, multiple: int = 8, allow_zero: bool = False) -> list:
    """Read a topology JSON file.

    Layers without an explicit ``permitted`` list get multiples of
    ``multiple`` plus their full width; ``"frozen": true`` pins a layer to its
    full width.
    """
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read topology {path}: {exc}") from exc
    if "layers" not in obj:
        raise ConfigError(f"topology {path} has no 'layers' list")
    layers = [_layer_from_json(entry, multiple, allow_zero) for entry in obj["layers"]]
    ids = [layer.id for layer in layers]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate layer ids in topology")
    known = set(ids)
    for layer in layers:
        missing = [d for d in layer.downstream_ids if d not in known]
        if missing:
            raise ConfigError(f"layer {layer.id!r} lists unknown downstream layers {missing}")
    return layers


def topology_to_json(layers) -> dict:
    return {
        "layers": [
            {
                "id": layer.id,
                "c_in": layer.c_in,
                "c_out": layer.c_out,
                "kernel": layer.kernel,
                "downstream": list(layer.downstream_ids),
                "shared_input_group": layer.group_name,
                "permitted": list(layer.permitted),
                "out_hw": list(layer.out_hw),
            }
            for layer in layers
        ]
    }


def save_topology(layers, path) -> None:
    Path(path).write_text(json.dumps(topology_to_json(layers), indent=1) + "\n")


# ---------------------------------------------------------------------------
# reference networks
# ---------------------------------------------------------------------------


@dataclass
class _Builder:
    multiple: int
    allow_zero: bool
    layers: list = field(default_factory=list)

    def add(self, id, c_in, c_out, kernel, hw, group, downstream=(), frozen=False):
        permitted = (c_in,) if frozen else layer_permitted(c_in, self.multiple, self.allow_zero)
        self.layers.append(
            LayerSpec(id, c_in, c_out, kernel, tuple(downstream), permitted, group, (hw, hw))
        )


def resnet50_layers(multiple: int = 8, allow_zero: bool = False, include_fc: bool = True) -> list:
    """Input-channel view of torchvision's ResNet50 at 224x224.

    Layers that read the same residual stream share one group, which gives
    38 pruning groups including the classifier.  The stem and the first
    stream (input of ``layer1.0``) are frozen, as is customary.
    """
    b = _Builder(multiple, allow_zero)
    widths = (64, 128, 256, 512)
    blocks = (3, 4, 6, 3)
    sizes = (56, 28, 14, 7)

    # consumers of every residual stream, filled as the blocks are laid out
    consumers: dict = {f"stream{s}": [] for s in range(5)}
    pending = []  # (layer index, stream name) whose downstream is a stream

    b.add("conv1", 3, 64, 7, 112, "stem", frozen=True)
    pending.append((0, "stream0"))
    in_ch = 64
    for s, (w, n, hw) in enumerate(zip(widths, blocks, sizes), start=1):
        in_stream = f"stream{s - 1}"
        out_stream = f"stream{s}"
        for k in range(n):
            name = f"layer{s}.{k}"
            src = in_stream if k == 0 else out_stream
            c_in = in_ch if k == 0 else 4 * w
            frozen = src == "stream0"
            conv1_hw = sizes[s - 2] if (k == 0 and s > 1) else hw
            b.add(f"{name}.conv1", c_in, w, 1, conv1_hw, src, [f"{name}.conv2"], frozen)
            consumers[src].append(f"{name}.conv1")
            b.add(f"{name}.conv2", w, w, 3, hw, f"{name}.conv2", [f"{name}.conv3"])
            b.add(f"{name}.conv3", w, 4 * w, 1, hw, f"{name}.conv3")
            pending.append((len(b.layers) - 1, out_stream))
            if k == 0:
                b.add(f"{name}.downsample", c_in, 4 * w, 1, hw, src, frozen=frozen)
                consumers[src].append(f"{name}.downsample")
                pending.append((len(b.layers) - 1, out_stream))
        in_ch = 4 * w
    if include_fc:
        b.add("fc", 2048, 1000, 1, 1, "stream4")
        consumers["stream4"].append("fc")

    for index, stream in pending:
        layer = b.layers[index]
        b.layers[index] = LayerSpec(
            layer.id, layer.c_in, layer.c_out, layer.kernel, tuple(consumers[stream]),
            layer.permitted, layer.group, layer.out_hw,
        )
    return b.layers


def toy_chain_layers(
    widths=(3, 16, 16, 24, 32), kernel: int = 3, hw: int = 8, multiple: int = 4, allow_zero: bool = False
) -> list:
    """A plain chain of convolutions ``widths[0] -> widths[1] -> ...``.

    The first layer reads the image and is frozen.  The last layer feeds the
    classifier head, which is outside the cost model.
    """
    layers = []
    n = len(widths) - 1
    for k in range(n):
        c_in, c_out = widths[k], widths[k + 1]
        permitted = (c_in,) if k == 0 else layer_permitted(c_in, multiple, allow_zero)
        downstream = (f"conv{k + 2}",) if k + 1 < n else ()
        layers.append(
            LayerSpec(f"conv{k + 1}", c_in, c_out, kernel, downstream, permitted, None, (hw, hw))
        )
    return layers
