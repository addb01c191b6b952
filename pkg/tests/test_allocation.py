import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softprune.allocation import (
    build_groups,
    build_instance,
    load_importance,
    min_cost_report,
    plan_channels,
    save_importance,
    top_mask,
)
from softprune.costs import CostLUT, FlopsModel, full_cost, synth_lut
from softprune.errors import ConfigError, Infeasible, LUTMiss, MissingImportance, ShapeMismatch
from softprune.mck import solve_brute_force, solve_dp
from softprune.topology import LayerSpec, resnet50_layers, shared_input_sets, toy_chain_layers


def test_shared_input_importances_sum():
    layers = [
        LayerSpec("down", 2, 4, group="s", permitted=(1, 2)),
        LayerSpec("conv1", 2, 4, group="s", permitted=(1, 2)),
    ]
    (g,) = build_groups(layers, shared_input_sets(layers), {"down": [1, 2], "conv1": [3, 4]})
    assert g.summed_importance.tolist() == [4, 6]
    assert g.layer_ids == ("down", "conv1")


def test_singleton_groups_without_skips():
    layers = toy_chain_layers()
    imp = {layer.id: np.arange(layer.c_in, dtype=float) for layer in layers}
    groups = build_groups(layers, shared_input_sets(layers), imp)
    assert [g.layer_ids for g in groups] == [(layer.id,) for layer in layers]
    for g, layer in zip(groups, layers):
        assert np.array_equal(g.summed_importance, imp[layer.id])


def test_permitted_union():
    layers = [
        LayerSpec("a", 24, 4, group="s", permitted=(8, 16)),
        LayerSpec("b", 24, 4, group="s", permitted=(0, 8, 16, 24)),
    ]
    (g,) = build_groups(layers, [["a", "b"]], {"a": np.ones(24), "b": np.ones(24)})
    assert g.permitted == (0, 8, 16, 24)


def test_build_groups_errors():
    a = LayerSpec("a", 4, 4, permitted=(2, 4), group="s")
    b = LayerSpec("b", 5, 4, permitted=(2, 5), group="s")
    with pytest.raises(ShapeMismatch):
        build_groups([a, b], [["a", "b"]], {"a": np.ones(4), "b": np.ones(5)})
    with pytest.raises(MissingImportance):
        build_groups([a], [["a"]], {})
    with pytest.raises(ShapeMismatch):
        build_groups([a], [["a"]], {"a": np.ones(3)})
    with pytest.raises(ValueError):
        build_groups([a], [["a"]], {"a": [1, -1, 0, 0]})
    with pytest.raises(ValueError):
        build_groups([a], [["a"]], {"a": [1, np.nan, 0, 0]})
    with pytest.raises(ConfigError):
        build_groups([a], [["a"], ["a"]], {"a": np.ones(4)})
    # frozen layers may come without scores
    frozen = LayerSpec("f", 3, 4)
    (g,) = build_groups([frozen], [["f"]], {})
    assert g.summed_importance.tolist() == [0, 0, 0]


def test_values_are_prefix_sums():
    layer = LayerSpec("a", 3, 1, permitted=(1, 2, 3))
    groups = build_groups([layer], [["a"]], {"a": [3, 1, 2]})
    enc = build_instance(groups, [layer], FlopsModel(), 1e9)
    assert enc.instance.groups[0].values.tolist() == [3, 5, 6]


def test_frozen_layer_single_item():
    layer = LayerSpec("a", 3, 1)
    groups = build_groups([layer], [["a"]], {"a": [3, 1, 2]})
    enc = build_instance(groups, [layer], FlopsModel(), 1e9)
    assert enc.instance.groups[0].values.tolist() == [6]


@pytest.mark.parametrize(
    "imp,p,mask",
    [([3, 1, 2], 2, [1, 0, 1]), ([5, 5, 1], 1, [1, 0, 0]), ([1, 2, 3], 3, [1, 1, 1]), ([1, 2], 0, [0, 0])],
)
def test_top_mask(imp, p, mask):
    assert top_mask(np.array(imp, float), p).astype(int).tolist() == mask


def test_costs_use_downstream_current_counts():
    layers = [
        LayerSpec("a", 8, 8, 1, ("b",), (4, 8)),
        LayerSpec("b", 8, 8, 1, (), (4, 8)),
    ]
    imp = {"a": np.ones(8), "b": np.ones(8)}
    groups = build_groups(layers, [["a"], ["b"]], imp, {"b": 4})
    enc = build_instance(groups, layers, FlopsModel(), 1e9)
    assert enc.p_out == {"a": 4, "b": 8}
    assert enc.instance.groups[0].costs.tolist() == [2 * 4 * 4, 2 * 8 * 4]


def test_lut_miss_propagates():
    layers = [LayerSpec("a", 8, 8, 1, (), (4, 8))]
    groups = build_groups(layers, [["a"]], {"a": np.ones(8)})
    lut = CostLUT({"a": {(8, 8): 1.0}})
    with pytest.raises(LUTMiss):
        build_instance(groups, layers, lut, 10.0)


def _three_group_problem(rng, uniform=False):
    widths = [8, 16, 16, 16]
    layers = [
        LayerSpec(f"l{k}", widths[k], widths[k + 1], 3, (f"l{k + 1}",) if k < 2 else (), (4, 8, 12, 16)[: widths[k] // 4], None, (4, 4))
        for k in range(3)
    ]
    if uniform:
        imp = {layer.id: np.ones(layer.c_in) for layer in layers}
    else:
        imp = {layer.id: rng.exponential(1.0, layer.c_in) for layer in layers}
    return layers, imp


def _exhaustive(layers, imp, model, target):
    best, arg = -math.inf, None
    for counts in itertools.product(*(layer.permitted for layer in layers)):
        cost = sum(model.cost(layer, k, layer.c_out) for layer, k in zip(layers, counts))
        if cost <= target:
            value = sum(np.sort(imp[layer.id])[::-1][:k].sum() for layer, k in zip(layers, counts))
            if value > best + 1e-12:
                best, arg = value, counts
    return best, arg


def test_uniform_half_target_keeps_about_half():
    layers, imp = _three_group_problem(None, uniform=True)
    model = FlopsModel()
    start = full_cost(layers, model)
    groups = build_groups(layers, shared_input_sets(layers), imp)
    plan = plan_channels(layers, groups, model, 0.5 * start)
    best, arg = _exhaustive(layers, imp, model, 0.5 * start)
    assert plan.total_importance == pytest.approx(best)
    assert plan.total_cost <= 0.5 * start
    for g, layer in zip(plan.groups, layers):
        assert g.kept in layer.permitted
    kept = sum(g.kept for g in plan.groups)
    assert 0.3 <= kept / sum(layer.c_in for layer in layers) <= 0.7


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_plan_matches_exhaustive(seed, fraction):
    rng = np.random.default_rng(seed)
    layers, imp = _three_group_problem(rng)
    model = FlopsModel()
    target = fraction * full_cost(layers, model)
    groups = build_groups(layers, shared_input_sets(layers), imp)
    best, _ = _exhaustive(layers, imp, model, target)
    if best == -math.inf:
        with pytest.raises(Infeasible):
            plan_channels(layers, groups, model, target)
        return
    plan = plan_channels(layers, groups, model, target)
    assert plan.total_importance == pytest.approx(best, rel=1e-12)
    assert plan.total_cost <= target
    for g in plan.groups:
        assert g.mask.sum() == g.kept
        assert np.array_equal(g.mask, top_mask(imp[g.layer_ids[0]], g.kept))


def test_full_target_full_width():
    layers = toy_chain_layers()
    lut = synth_lut(layers)
    imp = {layer.id: np.ones(layer.c_in) for layer in layers}
    groups = build_groups(layers, shared_input_sets(layers), imp)
    plan = plan_channels(layers, groups, lut, full_cost(layers, lut))
    assert plan.kept() == {layer.id: layer.c_in for layer in layers}


def test_infeasible_names_binding_groups():
    layers = toy_chain_layers()
    lut = synth_lut(layers)
    groups = build_groups(layers, shared_input_sets(layers), {layer.id: np.ones(layer.c_in) for layer in layers})
    with pytest.raises(Infeasible, match="conv"):
        plan_channels(layers, groups, lut, 1.0)


def test_group_masks_shared_by_members():
    layers = resnet50_layers(include_fc=False)
    rng = np.random.default_rng(0)
    imp = {layer.id: rng.random(layer.c_in) for layer in layers}
    lut = synth_lut(layers, step=8, total_ms=400.0)
    groups = build_groups(layers, shared_input_sets(layers), imp)
    plan = plan_channels(layers, groups, lut, 255.4)
    assert plan.total_cost <= 255.4
    masks = plan.layer_masks()
    for g in plan.groups:
        for lid in g.layer_ids:
            assert masks[lid] is g.mask
    # value of the plan equals the solver objective recomputed from scratch
    enc = build_instance(groups, layers, lut, 255.4)
    counts = [list(c) for c in enc.counts]
    chosen = [counts[k].index(g.kept) for k, g in enumerate(plan.groups)]
    assert enc.instance.evaluate(chosen)[0] == pytest.approx(plan.total_importance, rel=1e-12)


def test_plan_matches_dp_on_integer_lut():
    layers = toy_chain_layers(widths=(3, 8, 12, 8), multiple=2)
    lut = synth_lut(layers)
    lut = CostLUT({k: {key: float(round(v * 10)) for key, v in t.items()} for k, t in lut.tables.items()})
    rng = np.random.default_rng(1)
    imp = {layer.id: rng.random(layer.c_in) for layer in layers}
    groups = build_groups(layers, shared_input_sets(layers), imp)
    floor, _ = min_cost_report(build_instance(groups, layers, lut, 1e9))
    target = 0.5 * (floor + full_cost(layers, lut))
    plan = plan_channels(layers, groups, lut, target)
    enc = build_instance(groups, layers, lut, target)
    assert plan.total_importance == pytest.approx(solve_dp(enc.instance).total_value)
    assert plan.total_importance == pytest.approx(solve_brute_force(enc.instance).total_value)


def test_importance_roundtrip(tmp_path):
    imp = {"a": np.array([1.0, 2.0]), "b": np.array([0.5])}
    path = tmp_path / "imp.json"
    save_importance(imp, path)
    again = load_importance(path)
    assert again.keys() == imp.keys()
    assert all(np.array_equal(again[k], imp[k]) for k in imp)
    path.write_text("{}")
    with pytest.raises(ConfigError):
        load_importance(path)


def test_plan_json_shape():
    layers = toy_chain_layers()
    lut = synth_lut(layers)
    groups = build_groups(layers, shared_input_sets(layers), {layer.id: np.ones(layer.c_in) for layer in layers})
    obj = plan_channels(layers, groups, lut, 60.0).to_json()
    assert set(obj) >= {"groups", "total_cost_ms", "target_ms"}
    assert set(obj["groups"][0]) >= {"layers", "kept", "mask"}
