"""Run a config and print the bits-vs-gap table for its output directory.

    python3 scripts/bits_vs_gap.py configs/exp_decay.yaml --out runs/exp_decay
"""

import argparse
import sys
import warnings
from pathlib import Path

from mlmc_compress.cli import bits_gap_table, run_config
from mlmc_compress.config import load


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default=None)
    ap.add_argument("--budgets", type=int, default=4)
    args = ap.parse_args()

    config = load(args.config)
    out = Path(args.out) if args.out else Path("runs") / config.name
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run_config(config, out, log=lambda msg: print(msg, file=sys.stderr))
    header, rows = bits_gap_table(out, args.budgets)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())


if __name__ == "__main__":
    main()
