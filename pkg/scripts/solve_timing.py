"""Time the knapsack solvers on a ResNet50-sized allocation problem.

    python scripts/solve_timing.py --capacity 255.4 --repeats 5
"""

import argparse
import time

import numpy as np

from softprune.allocation import build_groups, build_instance
from softprune.costs import synth_lut
from softprune.mck import solve_dp, solve_mim
from softprune.topology import resnet50_layers, shared_input_sets


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--capacity", type=float, default=255.4)
    ap.add_argument("--total-ms", type=float, default=400.0, help="cost of the unpruned network")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-bound", action="store_true",
                    help="also run plain pairwise merging (needs many GB at this size)")
    ap.add_argument("--dp-scale", type=int, default=0, help="also run DP at this cost scale (0 = skip)")
    args = ap.parse_args()

    layers = resnet50_layers(allow_zero=True)
    sets = shared_input_sets(layers)
    lut = synth_lut(layers, seed=args.seed, step=8, total_ms=args.total_ms)
    rng = np.random.default_rng(args.seed)
    importance = {layer.id: rng.exponential(1.0, layer.c_in) for layer in layers}
    instance = build_instance(build_groups(layers, sets, importance), layers, lut, args.capacity).instance
    print(f"groups {len(instance.groups)}, items {sum(instance.sizes)}, largest {max(instance.sizes)}")

    rows = [("mim", lambda: solve_mim(instance))]
    if args.no_bound:
        rows.append(("mim, no bound", lambda: solve_mim(instance, bound=False)))
    if args.dp_scale:
        rows.append((f"dp s={args.dp_scale}", lambda: solve_dp(instance, scale=args.dp_scale)))
    for name, run in rows:
        times = []
        for _ in range(args.repeats if name == "mim" else 1):
            t0 = time.perf_counter()
            sol = run()
            times.append(time.perf_counter() - t0)
        print(f"{name:<16} value {sol.total_value:12.4f}  cost {sol.total_cost:9.3f}  "
              f"median {np.median(times) * 1e3:9.1f} ms", flush=True)


if __name__ == "__main__":
    main()
