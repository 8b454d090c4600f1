#!/usr/bin/env python3
"""Empirical size of the aggregated test under the null.

Replicates the null-model study at desk scale: draws beta = 0 data,
runs the single-split l1 test per replication, and reports the rejection
rate, which should sit near the nominal level.

Example:
    python scripts/run_size_study.py --model A --d 50 --n 100 --reps 200 \
        --threads 2 --out size.csv
"""

import argparse
import sys

from nwtest.pipeline import CandidateSpec, TestConfig
from nwtest.simbench import PowerCell, power_study


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="A", choices=["A", "B", "C", "D"])
    ap.add_argument("--d", type=int, default=50)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    config = TestConfig(
        variant="l1",
        candidates=(CandidateSpec(1, "l1", 0.01), CandidateSpec(1, "l1", 0.1)),
        n_splits=1, alpha=args.alpha)
    grid = [PowerCell(method="l1", model=args.model, beta=0.0, d=args.d,
                      n_x=args.n, n_y=args.n)]
    table = power_study(grid, n_reps=args.reps, alpha=args.alpha,
                        out_path=args.out, seed=args.seed,
                        test_config=config, n_jobs=args.threads)
    row = table.rows[0]
    print(f"model {args.model}, beta=0, d={args.d}, n={args.n}: "
          f"empirical size {row['reject_rate']:.3f} over {args.reps} reps "
          f"({row['n_failed']} failed) at alpha={args.alpha}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
