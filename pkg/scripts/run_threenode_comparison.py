#!/usr/bin/env python3
"""Run the three-node variant comparison and optionally plot the transients.

Writes trajectories and reports to the output directory, prints the
settling/oscillation summary, and, with --plot, saves a PNG of the primal
estimates for the three variants side by side.
"""
import argparse
import csv
import json
import sys
from collections import defaultdict
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from augpd.cli import parse_scenario, run_scenario  # noqa: E402


def load_theta(csv_path):
    series = defaultdict(lambda: ([], []))
    with open(csv_path) as fh:
        for row in csv.DictReader(fh):
            if row["quantity"] == "theta":
                ts, vals = series[row["entity"]]
                ts.append(float(row["t"]))
                vals.append(float(row["value"]))
    return series


def save_plot(summary, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(summary["algorithms"])
    fig, axes = plt.subplots(1, len(names), figsize=(4 * len(names), 3.2), sharey=True)
    axes = [axes] if len(names) == 1 else list(axes)
    for ax, name in zip(axes, names):
        for entity, (ts, vals) in sorted(load_theta(out_dir / f"{name}_trajectory.csv").items()):
            ax.plot(ts, vals, label=entity)
        ax.set_title(name)
        ax.set_xlabel("t")
        ax.set_xlim(0, 25)
        ax.legend(fontsize=8)
    axes[0].set_ylabel("theta")
    fig.tight_layout()
    png = out_dir / "comparison.png"
    fig.savefig(png, dpi=150)
    print(f"plot saved to {png}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="augpd-out/threenode-compare")
    ap.add_argument("--scenario", default=str(ROOT / "scenarios/threenode_compare.toml"))
    ap.add_argument("--plot", action="store_true", help="save theta transients as PNG")
    args = ap.parse_args()

    scenario = parse_scenario(args.scenario)
    summary = run_scenario(scenario, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.plot:
        save_plot(summary, Path(args.out))
    return 0 if summary["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
