import json
import subprocess
import sys

import numpy as np
import pytest

from softprune.allocation import save_importance
from softprune.cli import main
from softprune.topology import save_topology, toy_chain_layers


@pytest.fixture
def files(tmp_path):
    layers = toy_chain_layers()
    save_topology(layers, tmp_path / "topo.json")
    save_importance({layer.id: np.ones(layer.c_in) for layer in layers}, tmp_path / "imp.json")
    assert main(["gen-lut", "--topology", str(tmp_path / "topo.json"), "--out", str(tmp_path / "lut.json")]) == 0
    return tmp_path


def test_solve(tmp_path, capsys):
    path = tmp_path / "inst.json"
    path.write_text(json.dumps({"capacity": 5, "groups": [{"values": [0, 5], "costs": [0, 3]}, {"values": [0, 4], "costs": [0, 4]}]}))
    for solver in ("mim", "dp", "brute"):
        assert main(["solve", str(path), "--solver", solver]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out == {"chosen": [2, 1], "value": 5.0, "cost": 3.0}


def test_solve_exit_codes(tmp_path):
    path = tmp_path / "inst.json"
    path.write_text(json.dumps({"capacity": 5, "groups": [{"values": [7], "costs": [9]}]}))
    assert main(["solve", str(path)]) == 2
    path.write_text(json.dumps({"capacity": 5}))
    assert main(["solve", str(path)]) == 3
    assert main(["solve", str(tmp_path / "missing.json")]) == 3


def test_plan(files):
    out = files / "plan.json"
    args = ["plan", "--topology", str(files / "topo.json"), "--importance", str(files / "imp.json"),
            "--lut", str(files / "lut.json"), "--multiple", "4", "--out", str(out)]
    assert main(args + ["--target-cost", "50%"]) == 0
    plan = json.loads(out.read_text())
    assert plan["total_cost_ms"] <= plan["target_ms"]
    assert all(sum(g["mask"]) == g["kept"] for g in plan["groups"])
    assert main(args + ["--target-cost", "100%"]) == 0
    plan = json.loads(out.read_text())
    assert all(all(g["mask"]) for g in plan["groups"])


def test_plan_errors(files, capsys):
    base = ["plan", "--topology", str(files / "topo.json"), "--importance", str(files / "imp.json")]
    assert main(base + ["--lut", str(files / "lut.json"), "--target-cost", "1%"]) == 2
    assert "conv" in capsys.readouterr().err
    assert main(base + ["--target-cost", "50%"]) == 3
    assert main(base + ["--lut", str(files / "nope.json"), "--target-cost", "50%"]) == 3
    (files / "bad_imp.json").write_text(json.dumps({"layers": [{"id": "conv2", "scores": [1, 2]}]}))
    bad = ["plan", "--topology", str(files / "topo.json"), "--importance", str(files / "bad_imp.json"),
           "--lut", str(files / "lut.json"), "--target-cost", "50%"]
    assert main(bad) == 3
    # an 8-channel step table misses the 4-channel counts requested here
    assert main(["gen-lut", "--topology", str(files / "topo.json"), "--step", "8", "--out", str(files / "coarse.json")]) == 0
    coarse = base + ["--lut", str(files / "coarse.json"), "--multiple", "4", "--target-cost", "50%"]
    assert main(coarse) == 3


def test_bad_arguments_exit_3():
    with pytest.raises(SystemExit) as err:
        main(["bogus"])
    assert err.value.code == 3


def test_simulate_and_verify(tmp_path):
    out = tmp_path / "sim"
    args = ["simulate", "--epochs", "4", "--warmup", "1", "--ramp", "1", "--cooldown", "1",
            "--samples", "64", "--batch-size", "16", "--out", str(out)]
    assert main(args) == 0
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert lines and all(json.loads(line)["plan_cost"] <= json.loads(line)["target"] for line in lines)
    assert main(["verify", "schedule", "--out", str(tmp_path / "rep.json")]) == 0
    report = json.loads((tmp_path / "rep.json").read_text())
    assert report["passed"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "softprune.cli", "verify", "schedule"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["passed"]
