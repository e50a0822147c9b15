"""Chart a sweep.csv: mean cohort gain vs compliance bound, one line per
acceptable-set size.

Usage:
    python scripts/plot_sweep.py work/sweep.csv [--out sweep.png]
"""

import argparse
import csv
import sys
from collections import defaultdict


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("sweep_csv")
    parser.add_argument("--out", default="sweep.png")
    args = parser.parse_args()

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = defaultdict(list)
    with open(args.sweep_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            series[row["phi"]].append(
                (float(row["pi_max"]), float(row["cohort_gain"]),
                 float(row["cohort_gain_ci95"]))
            )

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for phi, points in sorted(series.items(), key=lambda kv: str(kv[0])):
        points.sort()
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        es = [p[2] for p in points]
        label = "no preference limit" if phi == "none" else f"top {phi}"
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=label)
    ax.set_xlabel("maximum compliance rate")
    ax.set_ylabel("mean cohort gain (currency/year)")
    ax.set_title("Backtested gain by compliance and acceptable-set size")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
