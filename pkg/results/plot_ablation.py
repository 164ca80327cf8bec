#!/usr/bin/env python3

# Plot the ablation and timing reports of a finished run:
#
#   python3 results/plot_ablation.py reports

import argparse
import json
import os

import matplotlib.pyplot as plt


def read_json(filename):
    with open(filename, "r") as fd:
        return json.loads(fd.read())


def get_parser():
    parser = argparse.ArgumentParser(description="Plot maskcount ablation and timing reports")
    parser.add_argument("reports_dir", nargs="?", default="reports", help="reports_dir of the run")
    parser.add_argument("--outdir", help="where to save the figures (defaults to reports_dir)")
    return parser


def plot_bars(names, values, ylabel, title, save_fig, color):
    fig, ax = plt.subplots(figsize=(10, 6))
    ax.grid(alpha=0.75, axis="y")
    ax.bar(names, values, color=color, alpha=0.8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(save_fig)
    plt.close()
    print(f"Saved {save_fig}")


def main():
    args = get_parser().parse_args()
    outdir = args.outdir or args.reports_dir
    os.makedirs(outdir, exist_ok=True)

    ablate = os.path.join(args.reports_dir, "ablate", "ablate.json")
    if os.path.exists(ablate):
        rows = read_json(ablate)["rows"]
        plot_bars(
            [row["method"] for row in rows],
            [row["mae"] for row in rows],
            "MAE (multi-class test scenes)",
            "Pseudo Label Strategies",
            os.path.join(outdir, "ablate-mae.png"),
            "#e74c3c",
        )

    ablate_k = os.path.join(args.reports_dir, "ablate", "ablate_k.json")
    if os.path.exists(ablate_k):
        rows = read_json(ablate_k)["rows"]
        plot_bars(
            [row["method"] for row in rows],
            [row["mae"] for row in rows],
            "MAE (multi-class test scenes)",
            "Fixed K Versus Segmenter",
            os.path.join(outdir, "ablate-k-mae.png"),
            "#2ecc71",
        )

    timing = os.path.join(args.reports_dir, "bench-time", "timing.json")
    if os.path.exists(timing):
        times = read_json(timing)["mean_time_s"]
        plot_bars(
            list(times),
            list(times.values()),
            "Mean time per scene (seconds)",
            "Masking Cost",
            os.path.join(outdir, "timing.png"),
            "#286bc8",
        )


if __name__ == "__main__":
    main()
