"""Shared driver for the figure scripts.

Each script names a set of built-in scenarios and the metrics to plot.
Traces are produced through the ``dpda run`` entry point, so the CSV and
summary files are the same ones the CLI writes. Plotting is optional and
skipped when matplotlib is missing.
"""

import argparse
import csv
import os
import sys
from collections import defaultdict

from dpda.cli import EXIT_OK, main as dpda_main
from dpda.scenarios import load_config


def parse_args(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--replications", type=int, help="override the replication count")
    p.add_argument("--iterations", type=int, help="override the iteration budget")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-plot", action="store_true")
    return p.parse_args()


def read_trace(path):
    """Return ``{metric: (k list, mean list)}`` from an averaged trace CSV."""
    out = defaultdict(lambda: ([], []))
    with open(path) as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            ks, ys = out[row["metric"]]
            ks.append(int(row["k"]))
            ys.append(float(row["mean"]))
    return dict(out)


def run_scenarios(names, args):
    """Run each scenario and return ``{(scenario, mode): trace csv path}``."""
    paths = {}
    for name in names:
        argv = ["run", name, "--out", args.out, "--jobs", str(args.jobs)]
        if args.replications is not None:
            argv += ["--replications", str(args.replications)]
        if args.iterations is not None:
            argv += ["--iterations", str(args.iterations)]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        code = dpda_main(argv)
        if code != EXIT_OK:
            sys.exit(code)
        for mode in load_config(name).schedule_modes:
            paths[(name, mode)] = os.path.join(args.out, f"{name}-{mode}.csv")
    return paths


def plot(paths, metrics, filename, args, title=""):
    if args.no_plot:
        return
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available, skipping plot")
        return
    traces = {key: read_trace(path) for key, path in paths.items()}
    fig, axes = plt.subplots(1, len(metrics), figsize=(4.2 * len(metrics), 3.4), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        for (name, mode), tr in traces.items():
            ks, ys = tr[metric]
            pts = [(k, y) for k, y in zip(ks, ys) if k > 0 and y > 0]
            if pts:
                ax.loglog(*zip(*pts), label=f"{name} ({mode})")
        ax.set_xlabel("k")
        ax.set_title(metric.replace("_", " "))
        ax.grid(True, which="both", alpha=0.3)
    axes[0][0].legend(fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    target = os.path.join(args.out, filename)
    fig.savefig(target, dpi=120)
    plt.close(fig)
    print(f"wrote {target}")


def figure(names, metrics, filename, description):
    args = parse_args(description)
    paths = run_scenarios(names, args)
    plot(paths, metrics, filename, args, description)
