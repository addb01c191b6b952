"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 infeasible target, 3 bad
configuration or input file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .allocation import build_groups, load_importance, plan_channels
from .costs import CostLUT, FlopsModel, full_cost, synth_lut
from .errors import ConfigError, Infeasible, LUTMiss, MissingImportance, ShapeMismatch
from .mck import MCKInstance, solve_brute_force, solve_dp, solve_mim
from .schedule import parse_target
from .simulate import SimConfig, run_smcp, write_outputs
from .topology import load_topology, resnet50_layers, shared_input_sets, toy_chain_layers

EXIT_OK, EXIT_INTERNAL, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_cost_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--lut", type=Path, help="latency lookup table (JSON)")
    src.add_argument("--flops", action="store_true", help="use the FLOPs model instead of a LUT")


def _add_topology_args(p, required=False):
    p.add_argument("--topology", type=Path, required=required, help="network topology (JSON)")
    p.add_argument("--multiple", type=int, default=8, help="permitted-count granularity")
    p.add_argument("--allow-layer-pruning", action="store_true", help="permit keeping zero channels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="softprune", description="Cost-constrained channel pruning planner.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve a raw multiple-choice knapsack instance")
    p.add_argument("instance", type=Path)
    p.add_argument("--solver", choices=["mim", "dp", "brute"], default="mim")
    p.add_argument("--scale", type=int, default=1, help="DP cost scale")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("plan", help="one-shot plan from importance and cost files")
    _add_topology_args(p, required=True)
    _add_cost_args(p)
    p.add_argument("--importance", type=Path, required=True)
    p.add_argument("--target-cost", required=True, help="absolute cost or percentage, e.g. 30%%")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("simulate", help="train and prune a toy chain on synthetic data")
    _add_topology_args(p)
    _add_cost_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-cost", default="50%")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--ramp", type=int, default=3)
    p.add_argument("--cooldown", type=int, default=2)
    p.add_argument("--rewire-every", type=int, default=4)
    p.add_argument("--momentum", type=float, default=0.9, help="importance EMA momentum")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--image-size", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--importance-drift", type=float, default=0.0)
    p.add_argument("--record-time", action="store_true", help="add solver wall time to the trace")
    p.add_argument("--out", type=Path, default=Path("sim_out"))

    p = sub.add_parser("gen-lut", help="write a synthetic latency table")
    net = p.add_mutually_exclusive_group()
    net.add_argument("--topology", type=Path)
    net.add_argument("--resnet50", action="store_true")
    p.add_argument("--multiple", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cliff-period", type=int, default=8)
    p.add_argument("--step", type=int, default=1, help="tabulate every STEP channels")
    p.add_argument("--total-ms", type=float, default=100.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("suite", choices=["mck", "micrograd", "schedule", "allocation", "all"])
    p.add_argument("--out", type=Path)
    return parser


def _layers(args):
    if getattr(args, "topology", None):
        return load_topology(args.topology, args.multiple, args.allow_layer_pruning)
    return None


def _cost_model(args):
    if args.flops:
        return FlopsModel()
    if args.lut:
        return CostLUT.load(args.lut)
    return None


def _emit(obj, out):
    text = json.dumps(obj, indent=1) + "\n"
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    else:
        sys.stdout.write(text)


def cmd_solve(args):
    try:
        inst = MCKInstance.from_json(json.loads(args.instance.read_text()))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read instance {args.instance}: {exc}") from exc
    if args.solver == "mim":
        sol = solve_mim(inst)
    elif args.solver == "dp":
        sol = solve_dp(inst, scale=args.scale)
    else:
        sol = solve_brute_force(inst)
    _emit(sol.to_json(), args.out)
    return EXIT_OK


def cmd_plan(args):
    layers = _layers(args)
    model = _cost_model(args)
    if model is None:
        raise ConfigError("plan needs --lut or --flops")
    importance = load_importance(args.importance)
    start = full_cost(layers, model)
    target = parse_target(args.target_cost, start)
    groups = build_groups(layers, shared_input_sets(layers), importance)
    plan = plan_channels(layers, groups, model, target)
    out = args.out / "plan.json" if args.out and args.out.suffix != ".json" else args.out
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        plan.save(out)
    else:
        sys.stdout.write(json.dumps(plan.to_json()) + "\n")
    print(f"{'group':<24} {'c_in':>6} {'kept':>6} {'cost':>12}", file=sys.stderr)
    by_name = {g.name: g for g in groups}
    for g in plan.groups:
        print(f"{g.name:<24} {by_name[g.name].c_in:>6} {g.kept:>6} {g.cost:>12.6g}", file=sys.stderr)
    print(f"total cost {plan.total_cost:.6g} of target {target:.6g} (unpruned {start:.6g})", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    layers = _layers(args)
    model = _cost_model(args)
    config = SimConfig(
        layers=layers,
        cost_model=model,
        epochs=args.epochs,
        warmup=args.warmup,
        ramp=args.ramp,
        cooldown=args.cooldown,
        rewire_every=args.rewire_every,
        target=args.target_cost,
        seed=args.seed,
        n_classes=args.classes,
        samples=args.samples,
        image_size=args.image_size,
        batch_size=args.batch_size,
        lr=args.lr,
        importance_momentum=args.momentum,
        importance_drift=args.importance_drift,
        record_time=args.record_time,
    )
    result = run_smcp(config)
    summary = write_outputs(result, args.out)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_gen_lut(args):
    if args.topology:
        layers = load_topology(args.topology, args.multiple)
    elif args.resnet50:
        layers = resnet50_layers(args.multiple)
    else:
        layers = toy_chain_layers()
    lut = synth_lut(layers, seed=args.seed, cliff_period=args.cliff_period, step=args.step, total_ms=args.total_ms)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    lut.save(args.out)
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suite

    report = run_suite(args.suite)
    _emit(report, args.out)
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['suite']}.{c['name']}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_INTERNAL


COMMANDS = {
    "solve": cmd_solve,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "gen-lut": cmd_gen_lut,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, LUTMiss, MissingImportance, ShapeMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
