"""Render sweep figures from an aggregate CSV.

Usage: gsdsim-plots AGGREGATE_CSV OUTPUT_DIR

For every (experiment, graph kind, network size) family the script draws
grouped bars of mean shots with standard-deviation error bars and overlays
mean cumulative memory as scatter points on a second axis.  When runtime
columns are present it also draws a log-log runtime scaling plot per planner
configuration with a least-squares linear fit, annotating the slope.

The script never recomputes simulation results; it is a pure function of the
CSV contents.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REQUIRED_COLUMNS = [
    "experiment_id", "graph_kind", "n_vertices", "n_nodes",
    "planner", "mem_strategy", "metric_variant",
    "mean_shots", "std_shots", "mean_cum_memory",
]
RUNTIME_COLUMN = "mean_planner_runtime_ms"


class SchemaError(ValueError):
    pass


def load_aggregate(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty CSV: nothing to draw")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"aggregate CSV is missing column {missing[0]!r}")
        rows = [row for row in reader]
    if not rows:
        raise SchemaError("empty CSV: nothing to draw")
    return rows


def config_label(row: dict) -> str:
    planner = row["planner"]
    if planner == "p2pgsd":
        return f"p2pgsd-{row['mem_strategy']}"
    if planner == "stp2pgsd":
        return f"stp2pgsd-{row['metric_variant']}"
    return planner


def family_key(row: dict) -> tuple:
    return (row["experiment_id"], row["graph_kind"], row["n_nodes"])


def render_family_panels(rows: list[dict], out_dir: str) -> list[str]:
    """One bar+scatter panel per (experiment, state family, network size)."""
    written = []
    families: dict = {}
    for row in rows:
        families.setdefault(family_key(row), []).append(row)
    for key in sorted(families):
        experiment, kind, n_nodes = key
        frows = families[key]
        labels = sorted({config_label(r) for r in frows})
        sizes = sorted({int(r["n_vertices"]) for r in frows})
        width = 0.8 / max(len(labels), 1)
        fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(sizes), 4.2))
        ax_mem = ax.twinx()
        cmap = plt.get_cmap("tab10")
        for li, label in enumerate(labels):
            xs, means, stds, mems = [], [], [], []
            for si, size in enumerate(sizes):
                match = [r for r in frows if config_label(r) == label and int(r["n_vertices"]) == size]
                if not match:
                    continue
                r = match[0]
                xs.append(si + (li - (len(labels) - 1) / 2) * width)
                means.append(float(r["mean_shots"] or "nan"))
                stds.append(float(r["std_shots"] or 0.0))
                mems.append(float(r["mean_cum_memory"] or "nan"))
            color = cmap(li % 10)
            ax.bar(xs, means, width=width, yerr=stds, capsize=2,
                   label=label, color=color, alpha=0.75)
            ax_mem.scatter(xs, mems, color=color, marker="D", s=28,
                           edgecolors="black", linewidths=0.4, zorder=5)
        ax.set_xticks(range(len(sizes)))
        ax.set_xticklabels([str(s) for s in sizes])
        ax.set_xlabel("state vertices")
        ax.set_ylabel("mean shots (bars)")
        ax_mem.set_ylabel("mean cumulative memory (diamonds)")
        ax.set_title(f"{experiment}: {kind} states on {n_nodes}-node networks")
        ax.legend(fontsize=8, loc="upper left")
        fig.tight_layout()
        stem = f"{experiment}_{kind}_{n_nodes}n".replace("/", "-")
        written.extend(_save_both(fig, out_dir, stem))
        plt.close(fig)
    return written


def fit_runtime_slope(sizes: np.ndarray, runtimes: np.ndarray) -> float:
    """Least-squares slope of log(runtime) against log(size)."""
    mask = (sizes > 0) & (runtimes > 0)
    if mask.sum() < 2:
        raise SchemaError("runtime fit needs at least two positive points")
    x = np.log(sizes[mask].astype(float))
    y = np.log(runtimes[mask].astype(float))
    slope, _intercept = np.polyfit(x, y, 1)
    return float(slope)


def render_runtime_scaling(rows: list[dict], out_dir: str) -> tuple[list[str], dict]:
    """Log-log runtime plot per configuration; returns fitted slopes."""
    if RUNTIME_COLUMN not in rows[0]:
        return [], {}
    written = []
    slopes: dict = {}
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["experiment_id"], config_label(row)), []).append(row)
    by_experiment: dict = {}
    for (experiment, label), grows in sorted(groups.items()):
        by_experiment.setdefault(experiment, []).append((label, grows))
    for experiment, entries in sorted(by_experiment.items()):
        fig, ax = plt.subplots(figsize=(5.2, 4.2))
        drew = False
        for label, grows in entries:
            pts = sorted(
                (int(r["n_vertices"]), float(r[RUNTIME_COLUMN]))
                for r in grows if r.get(RUNTIME_COLUMN) not in (None, "")
            )
            if len(pts) < 2:
                continue
            sizes = np.array([p[0] for p in pts], dtype=float)
            runtimes = np.array([p[1] for p in pts], dtype=float)
            try:
                slope = fit_runtime_slope(sizes, runtimes)
            except SchemaError:
                continue
            slopes[(experiment, label)] = slope
            ax.loglog(sizes, runtimes, "o-", label=f"{label} (slope {slope:.2f})")
            fit_y = np.exp(np.polyval(np.polyfit(np.log(sizes), np.log(runtimes), 1), np.log(sizes)))
            ax.loglog(sizes, fit_y, ":", color="gray", linewidth=1)
            drew = True
        if not drew:
            plt.close(fig)
            continue
        ax.set_xlabel("state vertices")
        ax.set_ylabel("planner runtime [ms]")
        ax.set_title(f"{experiment}: planner runtime scaling")
        ax.legend(fontsize=8)
        fig.tight_layout()
        written.extend(_save_both(fig, out_dir, f"{experiment}_runtime"))
        plt.close(fig)
    return written, slopes


def _save_both(fig, out_dir: str, stem: str) -> list[str]:
    paths = []
    for ext in ("svg", "png"):
        path = os.path.join(out_dir, f"{stem}.{ext}")
        fig.savefig(path, dpi=150)
        paths.append(path)
    return paths


def render(aggregate_csv: str, out_dir: str) -> dict:
    rows = load_aggregate(aggregate_csv)
    os.makedirs(out_dir, exist_ok=True)
    panels = render_family_panels(rows, out_dir)
    runtime_files, slopes = render_runtime_scaling(rows, out_dir)
    return {"files": panels + runtime_files, "slopes": slopes}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("aggregate_csv")
    parser.add_argument("out_dir")
    args = parser.parse_args(argv)
    try:
        result = render(args.aggregate_csv, args.out_dir)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in result["files"]:
        print(f"wrote {path}")
    for (experiment, label), slope in sorted(result["slopes"].items()):
        print(f"runtime slope {experiment}/{label}: {slope:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
