"""Gradient size behind a Conv-BN pair as input channels are masked.

Prints mean |dL/dz| for the unmasked pair and for each kept fraction, with
and without scaling the BN weight by that fraction.
"""

import argparse

import numpy as np

from softprune.engine import gradient_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--eps", type=float, default=1e-5)
    args = ap.parse_args()
    print(f"{'kept':>6} {'unscaled':>12} {'scaled':>12} {'dense':>10}")
    for alpha in (1.0, 0.75, 0.5, 0.25, 0.125, 0.0625):
        rows = [gradient_probe(alpha, seed=s, eps=args.eps) for s in range(args.seeds)]
        mean = lambda key: float(np.mean([r[key] for r in rows]))
        print(f"{alpha:6.3f} {mean('unscaled_gz'):12.4f} {mean('scaled_gz'):12.4f} {mean('dense_gz'):10.4f}")
    empty = gradient_probe(0.0, eps=0.0)
    print(f"all masked, eps=0: unscaled finite={empty['unscaled_finite']}, scaled finite={empty['scaled_finite']}")


if __name__ == "__main__":
    main()
