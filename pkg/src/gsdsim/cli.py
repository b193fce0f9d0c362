"""Experiment harness: generate, plan, simulate, validate, verify, sweep."""

from __future__ import annotations

import csv
import json
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from .graphs import GraphStateSpec, TopologyParams, gen_assignment, gen_cell_topology, gen_graph_state, gen_limited_memory, gen_waxman_network
from .mgst import mgst_plan
from .model import (
    DistributionTask,
    GsdError,
    compute_metrics,
    load_task,
    save_task,
    solution_from_jsonable,
    solution_to_jsonable,
)
from .p2pgsd import MemoryStrategyKind, p2pgsd_plan
from .protocol import PlannerKind, ProtocolConfig, RunStatus, run_adaptive
from .stp2pgsd import StMetric, StMetricVariant, stp2pgsd_plan
from .validate import is_valid_solution

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2

DATA_COLUMNS = [
    "experiment_id", "seed", "planner", "mem_strategy", "metric_variant",
    "graph_kind", "n_vertices", "n_nodes", "avg_channel_prob",
    "shots", "bell_pairs", "cum_memory", "planner_runtime_ms", "status",
]


@click.group()
def main():
    """Planner and stochastic simulator for graph-state distribution."""


@main.command()
@click.option("--nodes", type=int, default=16, show_default=True)
@click.option("--topology", type=click.Choice(["waxman", "cell"]), default="waxman", show_default=True)
@click.option("--beta", type=float, default=0.6, show_default=True, help="Waxman creation prefactor")
@click.option("--decay", type=float, default=5.0, show_default=True, help="Waxman distance decay")
@click.option("--attenuation", type=float, default=0.5, show_default=True)
@click.option("--avg-width", type=int, default=2, show_default=True)
@click.option("--cells", type=int, default=2, show_default=True, help="cell topology: number of cells")
@click.option("--cell-width", type=int, default=1, show_default=True, help="cell topology: bottleneck width")
@click.option("--cell-prob", type=float, default=0.9, show_default=True)
@click.option("--cell-size", type=int, default=4, show_default=True)
@click.option("--kind", type=click.Choice(list(GraphStateSpec.KINDS)), default="star", show_default=True)
@click.option("--vertices", type=int, default=5, show_default=True)
@click.option("--er-prob", type=float, default=0.1, show_default=True)
@click.option("--rows", type=int, default=0)
@click.option("--cols", type=int, default=0)
@click.option("--limited-memory", type=int, default=None, help="tight memory budgets with this average")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def generate(nodes, topology, beta, decay, attenuation, avg_width, cells, cell_width,
             cell_prob, cell_size, kind, vertices, er_prob, rows, cols, limited_memory, seed, out):
    """Generate a random task file."""
    rng_seeds = np.random.SeedSequence(seed).generate_state(3)
    if topology == "waxman":
        net = gen_waxman_network(TopologyParams(
            n_nodes=nodes, waxman_beta=beta, waxman_decay=decay,
            attenuation=attenuation, avg_channel_width=avg_width, seed=int(rng_seeds[0])))
    else:
        net = gen_cell_topology(cells, cell_width, cell_prob, cell_size=cell_size)
    if kind == "grid" and rows * cols != vertices:
        rows = rows or 1
        cols = vertices // rows
    spec = GraphStateSpec(kind, vertices, er_prob=er_prob, grid_rows=rows, grid_cols=cols,
                          seed=int(rng_seeds[1]))
    gs = gen_graph_state(spec)
    task = DistributionTask(net, gs, gen_assignment(gs, net, seed=int(rng_seeds[2])))
    if limited_memory is not None:
        net = gen_limited_memory(task, avg=limited_memory, seed=int(rng_seeds[2]) + 1)
        task = DistributionTask(net, gs, task.assignment)
    save_task(task, out)
    click.echo(f"wrote {out}: {len(net.nodes)} nodes, {len(net.channels)} channels, "
               f"{len(gs.vertices)} vertices, {len(gs.edges)} edges")


def _build_config(planner, mem_strategy, metric_variant, m_f, memory_cost,
                  recovery, st_eum, shot_cap) -> ProtocolConfig:
    variant = StMetricVariant(StMetric(metric_variant), m_f=m_f)
    if memory_cost is not None:
        variant.memory_cost = memory_cost
    return ProtocolConfig(
        planner=PlannerKind(planner),
        mem_strategy=MemoryStrategyKind(mem_strategy),
        st_variant=variant,
        recovery=recovery,
        st_eum=st_eum,
        shot_cap=shot_cap,
    )


planner_options = [
    click.option("--planner", type=click.Choice([p.value for p in PlannerKind]), default="p2pgsd", show_default=True),
    click.option("--mem-strategy", type=click.Choice([m.value for m in MemoryStrategyKind]), default="standard", show_default=True),
    click.option("--metric-variant", type=click.Choice([m.value for m in StMetric]), default="standard", show_default=True),
    click.option("--m-f", type=float, default=0.5, show_default=True),
    click.option("--memory-cost", type=float, default=None),
]


def add_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


@main.command()
@click.argument("task_file", type=click.Path(exists=True))
@add_options(planner_options)
@click.option("--out", type=click.Path(), default=None, help="solution file to write")
def plan(task_file, planner, mem_strategy, metric_variant, m_f, memory_cost, out):
    """Plan a distribution and report the ideal metrics."""
    task = load_task(task_file)
    if planner == "mgst":
        result = mgst_plan(task)
        solution = result.solution
        click.echo(f"root={result.root} k={result.k}")
    elif planner == "p2pgsd":
        solution = p2pgsd_plan(task, MemoryStrategyKind(mem_strategy))
    else:
        variant = StMetricVariant(StMetric(metric_variant), m_f=m_f)
        if memory_cost is not None:
            variant.memory_cost = memory_cost
        st = stp2pgsd_plan(task, variant)
        solution = st.solution
        click.echo(f"k={st.k}")
    m = compute_metrics(solution, task.network)
    click.echo(f"shots={m.shots} bell_pairs={m.bell_pairs} cum_memory={m.cum_memory}")
    if out:
        with open(out, "w") as fh:
            json.dump(solution_to_jsonable(solution), fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote {out}")


@main.command()
@click.argument("task_file", type=click.Path(exists=True))
@add_options(planner_options)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--recovery/--no-recovery", default=True, show_default=True)
@click.option("--st-eum/--no-st-eum", default=False, show_default=True)
@click.option("--shot-cap", type=int, default=200, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="trace file to write")
@click.option("--events", type=click.Path(), default=None,
              help="optional line-delimited per-shot event log")
def simulate(task_file, planner, mem_strategy, metric_variant, m_f, memory_cost,
             seed, recovery, st_eum, shot_cap, out, events):
    """Execute the adaptive protocol on a task."""
    task = load_task(task_file)
    config = _build_config(planner, mem_strategy, metric_variant, m_f, memory_cost,
                           recovery, st_eum, shot_cap)
    trace = run_adaptive(task, config, seed=seed)
    click.echo(f"status={trace.status.value} shots={trace.shots} "
               f"bell_pairs={trace.bell_pairs} cum_memory={trace.cum_memory}")
    if out:
        with open(out, "w") as fh:
            json.dump(trace.to_jsonable(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote {out}")
    if events:
        with open(events, "w") as fh:
            for record in trace.records:
                fh.write(json.dumps(record.to_jsonable(), sort_keys=True))
                fh.write("\n")
        click.echo(f"wrote {events}")


@main.command()
@click.argument("task_file", type=click.Path(exists=True))
@click.argument("solution_file", type=click.Path(exists=True))
def validate(task_file, solution_file):
    """Check a solution file against the reachability criterion."""
    task = load_task(task_file)
    with open(solution_file) as fh:
        solution = solution_from_jsonable(json.load(fh))
    try:
        verdict = is_valid_solution(solution, task)
    except GsdError as exc:
        click.echo(f"invalid: {exc}")
        sys.exit(EXIT_INVALID)
    if verdict.ok:
        witnesses = {str(list(e)): list(w) for e, w in sorted(verdict.witnesses.items())}
        click.echo("valid")
        click.echo(json.dumps({"witnesses": witnesses}, sort_keys=True))
        sys.exit(EXIT_OK)
    click.echo(f"invalid: edge {list(verdict.failing_edge)} has no meeting point")
    sys.exit(EXIT_INVALID)


@main.command()
@click.option("--max-vertices", type=int, default=4, show_default=True,
              help="exhaustive layer-transfer check up to this size")
def verify(max_vertices):
    """Run the stabilizer-formalism verification suite."""
    import itertools

    import networkx as nx

    from .model import GraphState, channel_key
    from .stabilizer import verify_cz_layer_teleport, verify_fusion

    failures = 0
    for n in range(2, max_vertices + 1):
        seen = []
        for bits in itertools.product((0, 1), repeat=n * (n - 1) // 2):
            pairs = list(itertools.combinations(range(n), 2))
            edges = [p for p, b in zip(pairs, bits) if b]
            G = nx.Graph()
            G.add_nodes_from(range(n))
            G.add_edges_from(edges)
            if not nx.is_connected(G) or any(nx.is_isomorphic(G, H) for H in seen):
                continue
            seen.append(G)
            gs = GraphState(frozenset(range(n)), frozenset(channel_key(a, b) for a, b in edges))
            ok = verify_cz_layer_teleport(gs)
            click.echo(f"layer transfer n={n} edges={sorted(edges)}: {'ok' if ok else 'FAIL'}")
            failures += 0 if ok else 1
    star3 = GraphState(frozenset(range(3)), frozenset({(0, 1), (0, 2)}))
    ok = verify_fusion(star3, star3, fuse_from=0, fuse_into=0)
    click.echo(f"fusion star3+star3: {'ok' if ok else 'FAIL'}")
    failures += 0 if ok else 1
    sys.exit(EXIT_OK if failures == 0 else EXIT_INVALID)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _run_one(args):
    (idx, experiment_id, cell, planner_spec, sample, seed_ints) = args
    topo_seed, assign_seed, run_seed, gs_seed = seed_ints
    net = _cell_network(cell, topo_seed)
    spec = GraphStateSpec(
        cell["graph_kind"], cell["n_vertices"],
        er_prob=cell.get("er_prob", 0.1),
        grid_rows=cell.get("grid_rows", 0), grid_cols=cell.get("grid_cols", 0),
        seed=gs_seed)
    gs = gen_graph_state(spec)
    injective = bool(cell.get("injective", True))
    task = DistributionTask(net, gs, gen_assignment(gs, net, seed=assign_seed, injective=injective))
    if cell.get("limited_memory"):
        net2 = gen_limited_memory(task, avg=int(cell["limited_memory"]),
                                  mgst_root_bonus=bool(cell.get("mgst_root_bonus", True)),
                                  seed=assign_seed + 1)
        task = DistributionTask(net2, gs, task.assignment)
    variant = StMetricVariant(StMetric(planner_spec.get("metric_variant", "standard")),
                              m_f=float(planner_spec.get("m_f", 0.5)))
    if "memory_cost" in planner_spec:
        variant.memory_cost = float(planner_spec["memory_cost"])
    config = ProtocolConfig(
        planner=PlannerKind(planner_spec["planner"]),
        mem_strategy=MemoryStrategyKind(planner_spec.get("mem_strategy", "standard")),
        st_variant=variant,
        recovery=bool(planner_spec.get("recovery", cell.get("recovery", True))),
        st_eum=bool(planner_spec.get("st_eum", False)),
        h_max=int(planner_spec.get("h_max", cell.get("h_max", 2))),
        shot_cap=int(cell.get("shot_cap", 200)),
    )
    trace = run_adaptive(task, config, seed=run_seed)
    probs = list(task.network.channel_prob.values())
    row = {
        "experiment_id": experiment_id,
        "seed": run_seed,
        "planner": planner_spec["planner"],
        "mem_strategy": planner_spec.get("mem_strategy", "standard"),
        "metric_variant": planner_spec.get("metric_variant", "standard"),
        "graph_kind": cell["graph_kind"],
        "n_vertices": cell["n_vertices"],
        "n_nodes": cell["n_nodes"],
        "avg_channel_prob": round(sum(probs) / len(probs), 6),
        "shots": trace.shots,
        "bell_pairs": trace.bell_pairs,
        "cum_memory": trace.cum_memory,
        "planner_runtime_ms": round(trace.planner_runtime_ms, 3),
        "status": trace.status.value,
    }
    return idx, row


def _cell_network(cell: dict, topo_seed: int):
    if cell.get("topology", "waxman") == "cell":
        return gen_cell_topology(int(cell.get("n_cells", 2)), int(cell.get("cell_width", 1)),
                                 float(cell.get("channel_prob", 0.9)),
                                 cell_size=int(cell.get("cell_size", 4)))
    params = TopologyParams(
        n_nodes=int(cell["n_nodes"]),
        waxman_beta=float(cell.get("waxman_beta", 0.6)),
        waxman_decay=float(cell.get("waxman_decay", 5.0)),
        attenuation=float(cell.get("attenuation", 0.5)),
        avg_channel_width=int(cell.get("avg_width", 2)),
        cz_prob=float(cell.get("cz_prob", 1.0)),
        seed=topo_seed,
    )
    net = gen_waxman_network(params)
    override = cell.get("prob_override")
    if override is not None:
        net.channel_prob = {c: float(override) for c in net.channel_prob}
    scale = cell.get("prob_scale_to")
    if scale is not None:
        mean = sum(net.channel_prob.values()) / len(net.channel_prob)
        factor = float(scale) / mean
        net.channel_prob = {c: min(max(p * factor, 1e-6), 1.0) for c, p in net.channel_prob.items()}
    return net


def sweep_jobs(config: dict) -> list[tuple]:
    """Deterministic job list (index, id, cell, planner, sample, seeds)."""
    experiment_id = config.get("experiment_id", "sweep")
    seed_base = int(config.get("seed_base", 0))
    samples = int(config.get("samples", 1))
    cells = config["cells"]
    planners = config["planners"]
    jobs = []
    idx = 0
    for ci, cell in enumerate(cells):
        for pi, planner_spec in enumerate(planners):
            PlannerKind(planner_spec["planner"])  # fail fast on a bad name
            for s in range(samples):
                ss = np.random.SeedSequence([seed_base, ci, pi, s])
                ints = [int(x) for x in ss.generate_state(4)]
                jobs.append((idx, experiment_id, cell, planner_spec, s, ints))
                idx += 1
    return jobs


def sweep_rows(config: dict) -> list[dict]:
    """All data rows for a sweep config, in deterministic order."""
    jobs = sweep_jobs(config)
    workers = int(os.environ.get("GSDSIM_WORKERS", "1"))
    rows: list = [None] * len(jobs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, row in pool.map(_run_one, jobs, chunksize=8):
                rows[i] = row
    else:
        for job in jobs:
            i, row = _run_one(job)
            rows[i] = row
    return rows


def aggregate_rows(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        key = (r["experiment_id"], r["graph_kind"], r["n_vertices"], r["n_nodes"],
               r["planner"], r["mem_strategy"], r["metric_variant"])
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        rs = groups[key]
        kept = [r for r in rs if r["status"] == "success"]
        row = {
            "experiment_id": key[0], "graph_kind": key[1], "n_vertices": key[2],
            "n_nodes": key[3], "planner": key[4], "mem_strategy": key[5],
            "metric_variant": key[6],
            "samples": len(rs),
            "discard_fraction": round(1.0 - len(kept) / len(rs), 6) if rs else 0.0,
        }
        for metric in ("shots", "bell_pairs", "cum_memory", "planner_runtime_ms"):
            vals = [r[metric] for r in kept]
            row[f"mean_{metric}"] = round(statistics.fmean(vals), 6) if vals else ""
            row[f"std_{metric}"] = round(statistics.pstdev(vals), 6) if len(vals) > 1 else 0.0
        out.append(row)
    return out


@main.command()
@click.argument("config_file", type=click.Path(exists=True))
@click.option("--data", type=click.Path(), required=True, help="per-run CSV output")
@click.option("--aggregate", "aggregate_path", type=click.Path(), default=None)
@click.option("--samples", type=int, default=None, help="override the config sample count")
@click.option("--seed-base", type=int, default=None, help="override the config seed base")
def sweep(config_file, data, aggregate_path, samples, seed_base):
    """Run a sweep config and emit per-run (and aggregate) CSV files."""
    with open(config_file) as fh:
        config = json.load(fh)
    for key in ("cells", "planners"):
        if key not in config:
            click.echo(f"config error: missing key {key!r}", err=True)
            sys.exit(EXIT_USAGE)
    if samples is not None:
        config["samples"] = samples
    if seed_base is not None:
        config["seed_base"] = seed_base
    rows = sweep_rows(config)
    with open(data, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DATA_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    click.echo(f"wrote {data} ({len(rows)} rows)")
    if aggregate_path:
        agg = aggregate_rows(rows)
        if agg:
            with open(aggregate_path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(agg[0].keys()))
                writer.writeheader()
                for row in agg:
                    writer.writerow(row)
            click.echo(f"wrote {aggregate_path} ({len(agg)} rows)")


if __name__ == "__main__":
    main()
