"""Path-level recovery: detour discovery, switch selection and memory saving.

Each node on a main path decides locally which two of its qubits to fuse,
by routing two arc-disjoint maximum-probability paths from itself to the two
path endpoints through the residue network (known-good links at unit
probability, failed links dropped, unknown links at their priors).  The
two-shot variant additionally prices storing a qubit one shot against
re-attempting links, and saves exactly when the cheapest two-layer route uses
the node's memory link.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .flows import FlowGraph, flow_decomposition, min_cost_max_flow
from .model import (
    INF_COST,
    UNLIMITED,
    Channel,
    GsdError,
    Network,
    channel_key,
    channel_success_prob,
)

DEFAULT_MEM_COST = -math.log(0.8)
DEFAULT_H_MAX = 2


@dataclass
class LinkState:
    """A node's knowledge of channel outcomes within its exchange radius.

    `known` maps a channel to its realized Bell-success count; channels
    absent from the map are unknown and keep their prior probabilities.
    """

    known: dict[Channel, int] = field(default_factory=dict)

    def outcome(self, channel: Channel) -> Optional[int]:
        return self.known.get(channel)


@dataclass
class RecoveryPlan:
    main: tuple[int, ...]
    detours: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict)  # (start idx, hops) -> node path

    def channels(self) -> set[Channel]:
        out = set()
        for path in self.detours.values():
            for a, b in zip(path, path[1:]):
                out.add(channel_key(a, b))
        return out


def find_recovery_paths(main: tuple[int, ...], residual, h_max: int = DEFAULT_H_MAX) -> RecoveryPlan:
    """Cheapest residual detour from each main-path node to its k-hop successor.

    `residual` must expose `cost(u, v)`, `consume(u, v)` and `adjacency()`
    (the planner's per-shot residual works).  Detour resources are deducted
    as soon as a detour is found.
    """
    plan = RecoveryPlan(main=tuple(main))
    if h_max <= 0 or len(main) < 2:
        return plan
    adjacency = residual.adjacency()
    for hops in range(1, h_max + 1):
        for start in range(len(main) - hops):
            end = start + hops
            path = _cheapest_detour(main[start], main[end], residual, adjacency, forbidden=set(main[start + 1:end]) | ({main[start + 1]} if hops == 1 else set()))
            if path is not None:
                plan.detours[(start, hops)] = path
                for a, b in zip(path, path[1:]):
                    residual.consume(a, b)
    return plan


def _cheapest_detour(src: int, dst: int, residual, adjacency, forbidden: set) -> Optional[tuple[int, ...]]:
    """Plain Dijkstra on the residual, avoiding the skipped main nodes."""
    dist = {src: 0.0}
    pred: dict[int, int] = {}
    heap = [(0.0, src)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            path = [dst]
            while path[-1] != src:
                path.append(pred[path[-1]])
            path.reverse()
            return tuple(path)
        for v in adjacency.get(u, ()):  # adjacency lists arrive sorted
            if v in forbidden and v != dst:
                continue
            w = residual.cost(u, v)
            if w >= INF_COST:
                continue
            nd = d + w
            if nd < dist.get(v, INF_COST) - 1e-12:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return None


def _residue_graph(main, plan, link_state, priors) -> tuple[FlowGraph, object, object]:
    """Flow graph over realized/unknown links with unit capacities."""
    g = FlowGraph()
    channels: set[Channel] = set()
    for a, b in zip(main, main[1:]):
        channels.add(channel_key(a, b))
    channels |= plan.channels()
    for c in sorted(channels):
        outcome = link_state.outcome(c)
        if outcome is not None and outcome <= 0:
            continue  # failed link: not in the residue
        if outcome is not None:
            cost = 0.0  # realized pair, certain
        else:
            p = priors.get(c, 0.0)
            if p <= 0.0:
                continue
            cost = -math.log(p)
        a, b = c
        # one pair, usable in either direction: two directed arcs with a
        # strictly positive charge, so no minimum-cost flow uses both (a
        # cancellation would cost strictly less) and ties prefer fewer links
        g.add_arc(a, b, 1, cost + 1e-9)
        g.add_arc(b, a, 1, cost + 1e-9)
    return g


def eum_switch(main: tuple[int, ...], plan: RecoveryPlan, link_state: LinkState,
               node: int, priors: dict[Channel, float]) -> Optional[tuple[int, int]]:
    """Choose the two neighbors whose qubits this node should fuse.

    Returns None when no pair of arc-disjoint routes to the two endpoints
    exists in the residue network (the node abstains and the path fails).
    """
    if node not in main:
        raise GsdError(f"node {node} is not on the main path")
    e0, e1 = main[0], main[-1]
    if node in (e0, e1) and len(main) == 1:
        return None
    if all((link_state.outcome(channel_key(a, b)) or 0) > 0 for a, b in zip(main, main[1:])):
        # certain residue: the main path itself is the best through-route
        i = main.index(node)
        left = main[i - 1] if i > 0 else node
        right = main[i + 1] if i + 1 < len(main) else node
        pair = tuple(sorted((left, right)))
        return (pair[0], pair[1])
    g = _residue_graph(main, plan, link_state, priors)
    source = ("src",)
    sink = ("sink",)
    g.add_arc(source, node, 2, 0.0)
    # endpoint == node happens for trivial positions; give it a free arc
    for endpoint in {e0, e1}:
        cap = 2 if e0 == e1 else 1
        if endpoint == node:
            g.add_arc(node, sink, cap, 0.0)
        else:
            g.add_arc(endpoint, sink, cap, 0.0)
    value, _cost = min_cost_max_flow(g, source, sink)
    if value < 2:
        return None
    paths = flow_decomposition(g, source, sink)
    ports = []
    for p in paths:
        # p = [src, node, first_hop, ..., endpoint, sink]
        if len(p) >= 4:
            ports.append(p[2])
        else:
            ports.append(node)  # node itself is an endpoint: fuse with the local qubit
    ports.sort()
    return (ports[0], ports[1])


@dataclass
class TwoShotDecision:
    switch: Optional[tuple[int, int]]
    save: bool


def st_eum_decide(main: tuple[int, ...], plan: RecoveryPlan, link_state: LinkState,
                  node: int, priors: dict[Channel, float], network: Network,
                  mem_cost: float = DEFAULT_MEM_COST,
                  occupancy: Optional[dict[Channel, int]] = None,
                  saved_channels: Optional[set[Channel]] = None) -> TwoShotDecision:
    """Switch choice plus a keep-for-next-shot decision for one node.

    A two-layer residue is built: the realized first shot, memory links at
    `mem_cost`, and second-shot copies of the main channels at their
    conditional probabilities (damped by the smallest prior on the path so
    the current shot is preferred).  The node saves exactly when the cheapest
    endpoint-to-endpoint route through the two layers uses its memory link.
    """
    switch = eum_switch(main, plan, link_state, node, priors)
    if network.memory_of(node) == 0:
        return TwoShotDecision(switch, False)
    # a completed first-shot route makes saving pointless
    if _first_shot_complete(main, plan, link_state, priors):
        return TwoShotDecision(switch, False)
    saved_channels = saved_channels or set()
    occupancy = occupancy or {}
    prefactor = min((priors.get(channel_key(a, b), 1.0) for a, b in zip(main, main[1:])), default=1.0)

    adj: dict = {}
    costs: dict = {}

    def add(u, v, cost):
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
        costs[(u, v)] = cost
        costs[(v, u)] = cost

    channels = {channel_key(a, b) for a, b in zip(main, main[1:])} | plan.channels()
    for c in sorted(channels):
        a, b = c
        outcome = link_state.outcome(c)
        if outcome is not None and outcome > 0:
            add((a, 1), (b, 1), 0.0)
        elif outcome is None and priors.get(c, 0.0) > 0.0:
            add((a, 1), (b, 1), -math.log(priors[c]))
    nodes_involved = sorted({n for path in [main] + list(plan.detours.values()) for n in path})
    for n in nodes_involved:
        if network.memory_of(n) != 0:
            add((n, 1), (n, 2), mem_cost if math.isfinite(mem_cost) else INF_COST)
    for a, b in zip(main, main[1:]):
        c = channel_key(a, b)
        if c in saved_channels:
            continue  # a pair held from the previous shot has no fresh copy
        if c not in network.channel_width:
            continue
        w = network.channel_width[c]
        p = network.channel_prob[c]
        outcome = link_state.outcome(c)
        o_s = occupancy.get(c, 1)
        if outcome is not None:
            o2 = max(o_s - outcome - 1, 0)
            p2 = channel_success_prob(p, w, o2) * prefactor
            cost2 = INF_COST if p2 <= 0 else -math.log(p2)
        else:
            # expectation of the cost over the unseen success count
            cost2 = 0.0
            for c_s in range(w + 1):
                weight = math.comb(w, c_s) * p**c_s * (1 - p) ** (w - c_s)
                p2 = channel_success_prob(p, w, max(o_s - c_s - 1, 0)) * prefactor
                cost2 += weight * (INF_COST if p2 <= 0 else -math.log(p2))
        if math.isfinite(cost2):
            add((a, 2), (b, 2), cost2)

    path = _layer_dijkstra(adj, costs, (main[0], 2), (main[-1], 2))
    if path is None:
        return TwoShotDecision(switch, False)
    save = _uses_memory_link(path, node)
    return TwoShotDecision(switch, save)


def _first_shot_complete(main, plan, link_state, priors) -> bool:
    """Do the known-good links alone connect the two endpoints?"""
    adj: dict = {}
    channels = {channel_key(a, b) for a, b in zip(main, main[1:])} | plan.channels()
    for c in channels:
        if (link_state.outcome(c) or 0) > 0:
            a, b = c
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
    seen = {main[0]}
    stack = [main[0]]
    while stack:
        u = stack.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return main[-1] in seen


def _layer_dijkstra(adj, costs, src, dst):
    dist = {src: 0.0}
    pred = {}
    heap = [(0.0, src)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            path = [dst]
            while path[-1] != src:
                path.append(pred[path[-1]])
            path.reverse()
            return path
        for v in sorted(adj.get(u, ())):
            w = costs[(u, v)]
            if w >= INF_COST:
                continue
            nd = d + w
            if nd < dist.get(v, INF_COST) - 1e-12:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return None


def _uses_memory_link(path, node) -> bool:
    for (n1, k1), (n2, k2) in zip(path, path[1:]):
        if n1 == n2 == node and {k1, k2} == {1, 2}:
            return True
    return False


# ---------------------------------------------------------------------------
# Analytic two-shot-cycle model on an n-link line
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoShotCycleStats:
    cum_per_cycle: int
    expected_cycles: float
    expected_total: float
    threshold: float
    no_saving_total: float


def two_shot_cycle_stats(n: int, p: float) -> TwoShotCycleStats:
    """Cycle accounting for save-one-shot repetition of an n-link path.

    Each two-shot cycle stores the two end qubits for both shots and one
    qubit per interior node for one shot (n+3 units); a link survives a cycle
    with probability p(2-p), so the expected number of cycles is
    1/(p(2-p))**n.  Without saving, two end qubits per shot cost 2/p**n in
    expectation, which crosses the saving strategy at 2-((n+3)/2)**(1/n).
    """
    if n < 1:
        raise GsdError("n must be >= 1")
    if not (0.0 < p <= 1.0):
        raise GsdError("p must be in (0,1]")
    per_cycle = n + 3
    cycles = 1.0 / (p**n * (2.0 - p) ** n)
    return TwoShotCycleStats(
        cum_per_cycle=per_cycle,
        expected_cycles=cycles,
        expected_total=per_cycle * cycles,
        threshold=2.0 - ((n + 3) / 2.0) ** (1.0 / n),
        no_saving_total=2.0 / p**n,
    )


def simulate_two_shot_cycles(n: int, p: float, trials: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo (mean cycles, mean cumulative memory) of the save strategy."""
    cycles = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        cycles[idx] += 1
        first = rng.random((idx.size, n)) < p
        second = rng.random((idx.size, n)) < p
        survived = (first | second).all(axis=1)
        active[idx[survived]] = False
    mean_cycles = float(cycles.mean())
    return mean_cycles, float(((n + 3) * cycles).mean())


def simulate_no_saving(n: int, p: float, trials: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo (mean shots, mean cumulative memory) when nothing is kept."""
    shots = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        shots[idx] += 1
        ok = (rng.random((idx.size, n)) < p).all(axis=1)
        active[idx[ok]] = False
    return float(shots.mean()), float((2 * shots).mean())
