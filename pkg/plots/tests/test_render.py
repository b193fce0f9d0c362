import csv
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from render_figures import SchemaError, fit_runtime_slope, load_aggregate, main, render

COLUMNS = [
    "experiment_id", "graph_kind", "n_vertices", "n_nodes", "planner",
    "mem_strategy", "metric_variant", "samples", "discard_fraction",
    "mean_shots", "std_shots", "mean_bell_pairs", "std_bell_pairs",
    "mean_cum_memory", "std_cum_memory", "mean_planner_runtime_ms", "std_planner_runtime_ms",
]


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow(r)


def sample_row(**kwargs):
    base = {
        "experiment_id": "exp", "graph_kind": "star", "n_vertices": 8, "n_nodes": 16,
        "planner": "p2pgsd", "mem_strategy": "standard", "metric_variant": "standard",
        "samples": 10, "discard_fraction": 0.0,
        "mean_shots": 1.5, "std_shots": 0.5, "mean_bell_pairs": 9.0, "std_bell_pairs": 1.0,
        "mean_cum_memory": 12.0, "std_cum_memory": 2.0,
        "mean_planner_runtime_ms": 3.0, "std_planner_runtime_ms": 0.2,
    }
    base.update(kwargs)
    return base


class TestLoading:
    def test_empty_csv_errors(self, tmp_path):
        path = tmp_path / "agg.csv"
        write_csv(path, [])
        with pytest.raises(SchemaError, match="empty"):
            load_aggregate(str(path))

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "agg.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["experiment_id", "graph_kind"])
            writer.writeheader()
            writer.writerow({"experiment_id": "x", "graph_kind": "star"})
        with pytest.raises(SchemaError, match="n_vertices"):
            load_aggregate(str(path))


class TestRendering:
    def test_single_cell_emits_one_panel(self, tmp_path):
        path = tmp_path / "agg.csv"
        write_csv(path, [sample_row()])
        result = render(str(path), str(tmp_path / "figs"))
        panels = [f for f in result["files"] if "star" in os.path.basename(f)]
        assert len(panels) == 2  # svg + png of the one family panel
        assert all(os.path.exists(f) for f in result["files"])

    def test_multi_config_panel_and_runtime(self, tmp_path):
        rows = []
        for planner, mem in (("p2pgsd", "standard"), ("mgst", "standard")):
            for nv in (8, 11, 14):
                rows.append(sample_row(planner=planner, mem_strategy=mem, n_vertices=nv,
                                       mean_shots=1 + nv / 10,
                                       mean_planner_runtime_ms=0.5 * nv**2))
        path = tmp_path / "agg.csv"
        write_csv(path, rows)
        result = render(str(path), str(tmp_path / "figs"))
        assert any("runtime" in f for f in result["files"])
        assert any(f.endswith(".svg") for f in result["files"])
        assert any(f.endswith(".png") for f in result["files"])

    def test_cli_exit_codes(self, tmp_path):
        good = tmp_path / "agg.csv"
        write_csv(good, [sample_row()])
        assert main([str(good), str(tmp_path / "out")]) == 0
        empty = tmp_path / "empty.csv"
        write_csv(empty, [])
        assert main([str(empty), str(tmp_path / "out2")]) == 1


class TestDeskSweepEndToEnd:
    def test_renders_real_aggregate_csv(self, tmp_path):
        """A real desk-scale sweep aggregate renders into panels.

        Runs only when the simulator package is installed; the renderer
        itself never depends on it.
        """
        sim = pytest.importorskip("gsdsim.cli")
        config = {
            "experiment_id": "desk", "seed_base": 5, "samples": 3,
            "cells": [
                {"graph_kind": "star", "n_vertices": 5, "n_nodes": 12,
                 "waxman_beta": 0.9, "waxman_decay": 2.5, "shot_cap": 50},
                {"graph_kind": "star", "n_vertices": 8, "n_nodes": 12,
                 "waxman_beta": 0.9, "waxman_decay": 2.5, "shot_cap": 50},
            ],
            "planners": [{"planner": "p2pgsd"}, {"planner": "mgst"}],
        }
        rows = sim.sweep_rows(config)
        agg = sim.aggregate_rows(rows)
        path = tmp_path / "agg.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(agg[0].keys()))
            writer.writeheader()
            for row in agg:
                writer.writerow(row)
        result = render(str(path), str(tmp_path / "figs"))
        assert any(f.endswith("desk_star_12n.png") for f in result["files"])
        assert any("runtime" in f for f in result["files"])


class TestSlopeFit:
    def test_recovers_quadratic_slope(self):
        rng = np.random.default_rng(7)
        sizes = np.array([8, 12, 16, 24, 32, 48, 64], dtype=float)
        runtimes = 0.35 * sizes**2 * np.exp(rng.normal(0, 0.01, sizes.size))
        slope = fit_runtime_slope(sizes, runtimes)
        assert slope == pytest.approx(2.0, abs=0.05)

    def test_recovers_slope_through_render(self, tmp_path):
        rows = []
        for nv in (8, 12, 16, 24, 32):
            rows.append(sample_row(n_vertices=nv, mean_planner_runtime_ms=0.2 * nv**2))
        path = tmp_path / "agg.csv"
        write_csv(path, rows)
        result = render(str(path), str(tmp_path / "figs"))
        (slope,) = result["slopes"].values()
        assert slope == pytest.approx(2.0, abs=0.05)

    def test_too_few_points(self):
        with pytest.raises(SchemaError):
            fit_runtime_slope(np.array([8.0]), np.array([1.0]))
