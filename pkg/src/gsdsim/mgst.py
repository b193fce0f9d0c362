"""Centralized planner: k-copy flow graph, root search, binary search on shots.

The whole state is created at one root node and every vertex qubit is shipped
to its destination along edge-disjoint paths; a k-copy flow graph decides
whether k shots suffice and its decomposition is directly executable shot by
shot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .flows import FlowGraph, flow_decomposition, max_flow
from .model import (
    COST_EPS,
    DistributionTask,
    GsdError,
    NoSolutionError,
    PathPurpose,
    PlannedPath,
    ShotStrategy,
    Solution,
    StrategyKind,
    channel_key,
)

VROOT = "vroot"
UVEND = "uvend"


def _copy_node(node: int, copy: int) -> tuple:
    return ("n", node, copy)


def _vend(vertex: int) -> tuple:
    return ("vend", vertex)


def shipped_vertices(task: DistributionTask) -> list[int]:
    """Vertices that must travel: isolated ones are created locally instead."""
    return sorted(v for v in task.graph_state.vertices if task.graph_state.degree(v) > 0)


def build_flow_graph(task: DistributionTask, root: int, k: int,
                     ship: list[int] | None = None) -> FlowGraph:
    """k network copies between a virtual root and per-vertex virtual ends."""
    if k < 1:
        raise GsdError("k must be >= 1")
    if root not in task.network.nodes:
        raise GsdError(f"root {root} not in network")
    g = FlowGraph()
    net = task.network
    n_vertices = len(task.graph_state.vertices)
    ship = shipped_vertices(task) if ship is None else sorted(ship)
    g.add_node(VROOT)
    g.add_node(UVEND)
    for copy in range(1, k + 1):
        for node in sorted(net.nodes):
            g.add_node(_copy_node(node, copy))
        for (a, b) in net.channels:
            g.add_undirected(_copy_node(a, copy), _copy_node(b, copy), net.channel_width[(a, b)])
        g.add_arc(VROOT, _copy_node(root, copy), n_vertices)
    for v in ship:
        g.add_node(_vend(v))
        for copy in range(1, k + 1):
            g.add_arc(_copy_node(task.assignment.node(v), copy), _vend(v), 1)
        g.add_arc(_vend(v), UVEND, 1)
    return g


def mgst_feasible(task: DistributionTask, root: int, k: int,
                  ship: list[int] | None = None) -> bool:
    ship = shipped_vertices(task) if ship is None else sorted(ship)
    g = build_flow_graph(task, root, k, ship)
    return max_flow(g, VROOT, UVEND) == len(ship)


@dataclass
class MgstPlan:
    solution: Solution
    root: int
    k: int
    delivery_shot: dict[int, int]  # vertex -> shot (0 for local/root vertices)
    cost: float


def mgst_plan(task: DistributionTask, ship: list[int] | None = None) -> MgstPlan:
    """Search every root, binary-search minimal k, decompose per copy."""
    if not task.network.is_connected():
        raise NoSolutionError("network is not connected")
    ship = shipped_vertices(task) if ship is None else sorted(ship)
    if not ship:
        return MgstPlan(Solution([], [], []), root=min(task.network.nodes), k=0, delivery_shot={}, cost=0.0)
    best: tuple[int, float, int] | None = None  # (k, cost, root)
    best_paths = None
    hi_global = len(ship)
    for root in sorted(task.network.nodes):
        lo, hi = 1, hi_global
        if not mgst_feasible(task, root, hi, ship):
            continue
        while lo < hi:
            mid = (lo + hi) // 2
            if mgst_feasible(task, root, mid, ship):
                hi = mid
            else:
                lo = mid + 1
        k = lo
        paths = _decompose(task, root, k, ship)
        cost = sum(c for _v, _shot, _nodes, c in paths)
        key = (k, cost, root)
        if best is None or key[0] < best[0] or (
            key[0] == best[0] and (key[1] < best[1] - COST_EPS or (abs(key[1] - best[1]) <= COST_EPS and root < best[2]))
        ):
            best = key
            best_paths = paths
    if best is None:
        raise NoSolutionError("no feasible root found")
    k, cost, root = best
    return _plan_from_paths(task, root, k, best_paths, cost, ship)


def _decompose(task: DistributionTask, root: int, k: int,
               ship: list[int] | None = None) -> list[tuple[int, int, tuple[int, ...], float]]:
    """Unit paths (vertex, shot, nodes root->target, cost) of the k-copy flow."""
    ship = shipped_vertices(task) if ship is None else sorted(ship)
    g = build_flow_graph(task, root, k, ship)
    value = max_flow(g, VROOT, UVEND)
    if value != len(ship):
        raise NoSolutionError(f"flow {value} < {len(ship)} at k={k}")
    raw = flow_decomposition(g, VROOT, UVEND)
    cz_cost = -math.log(task.network.cz_prob)
    out = []
    # route multiplicity: several vertices can share a target node; match
    # decomposed paths to vend labels carried in the path tail
    for path in raw:
        # path = [VROOT, (n, root, copy), ..., (n, target, copy), (vend, v), UVEND]
        vend = path[-2]
        vertex = vend[1]
        inner = path[1:-2]
        copy = inner[0][2]
        nodes = tuple(step[1] for step in inner)
        cost = 0.0
        for a, b in zip(nodes, nodes[1:]):
            cost += -math.log(task.network.channel_prob[channel_key(a, b)])
        cost += max(len(nodes) - 2, 0) * cz_cost
        out.append((vertex, copy, nodes, cost))
    out.sort(key=lambda item: (item[1], item[0]))
    return out


def _plan_from_paths(task, root, k, paths, cost, ship=None) -> MgstPlan:
    ship = shipped_vertices(task) if ship is None else sorted(ship)
    delivery: dict[int, int] = {}
    planned: list[PlannedPath] = []
    for vertex, shot, nodes, _c in paths:
        if len(nodes) <= 1:
            delivery[vertex] = 0  # vertex lives at the root already
            continue
        delivery[vertex] = shot
        planned.append(PlannedPath(
            shot=shot, purpose=PathPurpose.DELIVER,
            nodes=nodes, owners=tuple(vertex for _ in nodes[1:]),
            deliver_vertex=vertex,
        ))
    n = k
    bell = [ShotStrategy(StrategyKind.BELL, s) for s in range(1, n + 1)]
    memory = [ShotStrategy(StrategyKind.MEMORY, s) for s in range(1, n + 1)]
    for p in planned:
        # reach spreads from the assigned end back toward the root
        for a, b in zip(p.nodes, p.nodes[1:]):
            bell[p.shot - 1].add_bell_flow(b, a, p.deliver_vertex)
    for v in ship:
        j = delivery[v]
        target = task.assignment.node(v)
        if target == root or j == 0:
            for boundary in range(1, n + 1):
                memory[boundary - 1].add_memory_flow(root, v, forward=False)
            continue
        # root keeps the qubit one shot past delivery for protection
        for boundary in range(1, j + 1):
            memory[boundary - 1].add_memory_flow(root, v, forward=False)
        for boundary in range(j, n + 1):
            memory[boundary - 1].add_memory_flow(target, v, forward=False)
    solution = Solution(bell, memory, planned)
    solution.check_invariants(task.network)
    return MgstPlan(solution, root=root, k=k, delivery_shot=delivery, cost=cost)


def mgst_memory(k: int, task: DistributionTask, root: int) -> int:
    """Ideal cumulative memory of a k-shot centralized run."""
    n_vs = len(task.graph_state.vertices)
    if k == 0:
        return 0
    at_root = sum(1 for v in task.graph_state.vertices if task.assignment.node(v) == root)
    return (k + 1) * n_vs - at_root
