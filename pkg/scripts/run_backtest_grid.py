"""Run the full pipeline on a fresh synthetic cohort and sweep the
compliance x acceptable-set grid.

Usage:
    python scripts/run_backtest_grid.py --out work/ [--n 10000] [--k 20] [--seed 20240]
"""

import argparse
import sys
from pathlib import Path

from geomatch import cli


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="work")
    parser.add_argument("--n", type=int, default=10_000)
    parser.add_argument("--k", type=int, default=20)
    parser.add_argument("--seed", type=int, default=20240)
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--grid", default="desk", choices=["desk", "paper"])
    parser.add_argument("--jobs", type=int, default=2)
    args = parser.parse_args()

    out = Path(args.out)
    steps = [
        ["generate", "--n", str(args.n), "--k", str(args.k),
         "--seed", str(args.seed), "--out", str(out)],
        ["train", "--workdir", str(out), "--grid", args.grid,
         "--jobs", str(args.jobs)],
        ["predict", "--workdir", str(out)],
        ["rank", "--workdir", str(out)],
        ["sweep", "--workdir", str(out),
         "--pi-max", "0.1,0.2,0.3,0.4,0.5,0.6",
         "--phi", "5,10,25,none", "--runs", str(args.runs)],
        ["simulate", "--workdir", str(out), "--pi-max", "0.3", "--phi", "10",
         "--runs", str(args.runs), "--seed", str(args.seed), "--trace"],
    ]
    for step in steps:
        print(f"$ geomatch {' '.join(step)}")
        rc = cli.main(step)
        if rc != 0:
            return rc
    print(f"\nartifacts in {out}/ (sweep.csv, summary.json, shift.csv, subgroups.csv)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
