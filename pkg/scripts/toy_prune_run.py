"""Prune the toy chain at several targets and report the outcome.

    python scripts/toy_prune_run.py --targets 80% 50% 30% --out runs/
"""

import argparse
from pathlib import Path

from softprune.errors import Infeasible
from softprune.simulate import SimConfig, run_smcp, write_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--targets", nargs="+", default=["100%", "70%", "50%"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--drift", type=float, default=0.0, help="synthetic importance drift")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    print(f"{'target':>7} {'cost':>8} {'rewires':>8} {'on':>5} {'off':>5} {'acc':>6}  kept")
    for target in args.targets:
        config = SimConfig(epochs=args.epochs, warmup=2, ramp=4, cooldown=3, target=target,
                           seed=args.seed, importance_drift=args.drift)
        try:
            res = run_smcp(config)
        except Infeasible as exc:
            print(f"{target:>7} infeasible: {exc}")
            continue
        on = sum(r["flips_on"] for r in res.trace)
        off = sum(r["flips_off"] for r in res.trace)
        print(f"{target:>7} {res.plan.total_cost:8.2f} {len(res.trace):8d} {on:5d} {off:5d} "
              f"{res.accuracy:6.3f}  {res.plan.kept()}")
        if args.out:
            write_outputs(res, args.out / target.replace("%", "pct"))


if __name__ == "__main__":
    main()
