"""Compression variance on exponentially decaying vectors.

Prints sigma^2_comp / ||v||^2 for adaptive MLMC s-Top-k next to the
4/(rs) - 1 approximation and the Rand-k (k = s) coefficient d/k - 1.

    python3 scripts/exp_decay_table.py --d 10000 --r 0.01 0.05
"""

import argparse
import math

from mlmc_compress.compressors import SegmentedTopK
from mlmc_compress.core import Rng
from mlmc_compress.mlmc import exp_decay_variance_prediction, optimal_comp_variance
from mlmc_compress.problems import ExpDecayOracle, exp_decay_sample


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=10**4)
    ap.add_argument("--r", type=float, nargs="+", default=[0.01, 0.05])
    ap.add_argument("--rs", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'r':>6} {'s':>5} {'rs':>5} {'measured':>10} {'4/(rs)-1':>10} {'ratio':>7} {'rand-k':>10}")
    for r in args.r:
        v = exp_decay_sample(ExpDecayOracle(r, args.d), Rng(args.seed))
        norm_sq = math.fsum((v * v).tolist())
        for rs in args.rs:
            s = max(1, round(rs / r))
            measured = optimal_comp_variance(SegmentedTopK(s), v) / norm_sq
            predicted = exp_decay_variance_prediction(r, s, norm_sq) / norm_sq
            rand_k = args.d / s - 1
            print(f"{r:>6g} {s:>5d} {r * s:>5.2f} {measured:>10.4g} {predicted:>10.4g} "
                  f"{measured / predicted:>7.4f} {rand_k:>10.4g}")


if __name__ == "__main__":
    main()
