"""Space-time peer-to-peer planner: plan-ahead routing over the shot-expanded net.

Runs the greedy edge-implementation loop over a k-layer expansion of the
network, demanding that everything completes in that single expanded pass;
the smallest feasible k is found by binary search.  Vertical hops in found
paths directly define the memory strategy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .flows import NetView, modified_dijkstra
from .model import (
    INF_COST,
    UNLIMITED,
    DistributionTask,
    GsdError,
    NoSolutionError,
    PathPurpose,
    PlannedPath,
    ShotStrategy,
    Solution,
    StrategyKind,
    channel_key,
    channel_success_prob,
)
from .p2pgsd import VRM, MemoryStrategyKind, PendingPath, _resolve_pending, fix_segment
from .spacetime import DEFAULT_MEMORY_COST, SpacetimeNetwork, StNode, StPath, build_st_network, project_solution

_COST_CAP = 1e6


class StMetric(Enum):
    STANDARD = "standard"
    FACTOR = "factor"


@dataclass
class StMetricVariant:
    kind: StMetric = StMetric.STANDARD
    m_f: float = 0.5
    memory_cost: float = DEFAULT_MEMORY_COST

    def __post_init__(self):
        if self.m_f < 0:
            raise GsdError("m_f must be non-negative")


def st_effective_prob(p: float, width: int, occupied: int, shot_index: int, variant: StMetricVariant) -> float:
    """Effective success probability of a Bell link in a later layer.

    `shot_index` is the zero-based layer offset: 0 is the running shot and
    both variants reduce to the plain conditional probability there.  Later
    layers are discounted: the factor variant raises the conditional
    probability to 1 + shot_index*m_f, the standard variant multiplies by
    p**(shot_index*width), the chance that all earlier copies of the link
    fired as planned.
    """
    if shot_index < 0:
        raise GsdError("shot_index must be >= 0")
    base = channel_success_prob(p, width, occupied)
    if base <= 0.0:
        return 0.0
    if variant.kind is StMetric.FACTOR:
        return base ** (1.0 + shot_index * variant.m_f)
    return (p ** (shot_index * width)) * base


def _arc_cost_from_prob(p: float) -> float:
    if p <= 0.0:
        return INF_COST
    return min(-math.log(p), _COST_CAP)


HOP_EPS = 1e-6


@dataclass
class StResidual:
    """Occupancy over the expanded network: per (channel, layer) and per
    (node, boundary), the latter including anchor-chain reservations.

    `involved` tracks which vertices already used a link so that a later path
    sharing a vertex avoids it (antisymmetric flows must not cancel); anchor
    reservations pre-register their vertex on its memory column."""

    st: SpacetimeNetwork
    variant: StMetricVariant
    reserved: dict[tuple[int, int], int]  # (node, boundary) -> reserved slots
    bell_occupancy: dict = field(default_factory=dict)
    memory_occupancy: dict = field(default_factory=dict)
    involved: dict = field(default_factory=dict)  # link key -> set of vertices

    @staticmethod
    def link_key(a: StNode, b: StNode):
        (n1, k1), (n2, k2) = a, b
        if k1 == k2:
            return ("bell", channel_key(n1, n2), k1)
        return ("mem", n1, min(k1, k2))

    def cost(self, a: StNode, b: StNode) -> float:
        (n1, k1), (n2, k2) = a, b
        net = self.st.base
        if k1 == k2:
            c = channel_key(n1, n2)
            occ = self.bell_occupancy.get((c, k1), 0)
            p = st_effective_prob(net.channel_prob[c], net.channel_width[c], occ, k1 - 1, self.variant)
            cost = _arc_cost_from_prob(p)
            return cost if cost >= INF_COST else cost + HOP_EPS
        boundary = min(k1, k2)
        cap = net.memory_of(n1)
        if cap is not UNLIMITED:
            used = self.memory_occupancy.get((n1, boundary), 0) + self.reserved.get((n1, boundary), 0)
            if used >= cap:
                return INF_COST
        return self.variant.memory_cost + HOP_EPS

    def cost_for(self, a: StNode, b: StNode, vertices: tuple[int, int]) -> float:
        inv = self.involved.get(self.link_key(a, b))
        if inv and (inv & set(vertices)):
            return INF_COST
        return self.cost(a, b)

    def chains(self, a: StNode, b: StNode) -> bool:
        return a[1] == b[1]

    def consume(self, a: StNode, b: StNode, vertices: tuple[int, int] | None = None) -> None:
        (n1, k1), (n2, k2) = a, b
        if k1 == k2:
            key = (channel_key(n1, n2), k1)
            self.bell_occupancy[key] = self.bell_occupancy.get(key, 0) + 1
        else:
            key = (n1, min(k1, k2))
            self.memory_occupancy[key] = self.memory_occupancy.get(key, 0) + 1
        if vertices is not None:
            self.involved.setdefault(self.link_key(a, b), set()).update(vertices)


@dataclass
class StPlanResult:
    st_paths: list[StPath]
    implemented: list[tuple[int, int]]
    used_entries: list[tuple[int, StNode]]


class StP2PPlanner:
    """One expanded pass of the greedy edge loop over k layers."""

    def __init__(self, task: DistributionTask, k: int, variant: StMetricVariant,
                 priority_edges: Optional[list[tuple[int, int]]] = None):
        self.task = task
        self.k = k
        self.variant = variant
        self.st = build_st_network(task.network, k, variant.memory_cost)
        seeds = {
            v: [(n, layer) for n in sorted(task.assignment.nodes(v)) for layer in range(1, k + 2)]
            for v in task.graph_state.vertices
        }
        self.vrm = VRM(seeds)
        reserved: dict[tuple[int, int], int] = {}
        involved: dict = {}
        for v in sorted(task.graph_state.vertices):
            for n in sorted(task.assignment.nodes(v)):
                for boundary in range(1, k + 1):
                    reserved[(n, boundary)] = reserved.get((n, boundary), 0) + 1
                    involved.setdefault(("mem", n, boundary), set()).add(v)
        self.residual = StResidual(self.st, variant, reserved, involved=involved)
        self.adjacency = self.st.adjacency()
        self.priority_edges = priority_edges or []

    def degree(self, v: int, remaining: set) -> int:
        return sum(1 for e in remaining if v in e)

    def plan(self) -> Optional[StPlanResult]:
        """Attempt to implement every edge within the k layers; None if stuck.

        Edges that fail to route are retried after others have extended the
        reach maps, mirroring the flat planner's per-shot waiting; the search
        gives up only when a full pass makes no progress.
        """
        gs = self.task.graph_state
        remaining = set()
        for e in sorted(gs.edges):
            v1, v2 = e
            if not (self.task.assignment.nodes(v1) & self.task.assignment.nodes(v2)):
                remaining.add(e)
        result = StPlanResult([], [], [])
        pendings: list[PendingPath] = []
        cz_cost = -math.log(self.task.network.cz_prob)
        while remaining:
            progressed = False
            for edge in self._edge_order(gs, remaining):
                if edge not in remaining:
                    continue
                v1, v2 = edge
                if self._route_edge(v1, v2, cz_cost, pendings, result):
                    remaining.discard(edge)
                    result.implemented.append(edge)
                    progressed = True
            if not progressed:
                return None
        for pending in pendings:
            if not pending.resolved:
                _resolve_pending(self.vrm, pending, len(pending.nodes) - 1)
        for pending in pendings:
            result.st_paths.append(self._pending_to_st(pending))
        return result

    def _edge_order(self, gs, remaining: set) -> list[tuple[int, int]]:
        """Priority edges first, then the highest-degree-vertex greedy order."""
        order: list[tuple[int, int]] = [e for e in self.priority_edges if e in remaining]
        seen = set(order)
        vertices = sorted((v for v in self.vrm.entries if self.degree(v, remaining) > 0),
                          key=lambda v: (-self.degree(v, remaining), v))
        for vc in vertices:
            neighbors = sorted(
                (u for u in gs.neighbors(vc) if channel_key(vc, u) in remaining),
                key=lambda u: (-self.degree(u, remaining), u),
            )
            for u in neighbors:
                e = channel_key(vc, u)
                if e not in seen:
                    seen.add(e)
                    order.append(e)
        return order

    def _route_edge(self, v1: int, v2: int, cz_cost, pendings, result) -> bool:
        sources = self.vrm.endpoints(v1)
        targets = self.vrm.endpoints(v2)
        pair = (v1, v2)
        view = NetView(adjacency=self.adjacency,
                       cost_fn=lambda a, b: self.residual.cost_for(a, b, pair),
                       cz_cost=cz_cost, chain_fn=self.residual.chains)
        try:
            found = modified_dijkstra(view, sources, targets)
        except NoSolutionError:
            return False
        nodes = found.nodes
        for vertex, node in ((v1, nodes[0]), (v2, nodes[-1])):
            entry = self.vrm.entries[vertex][node]
            if entry.pending is not None:
                fix_segment(self.vrm, vertex, node)
            self.vrm.entries[vertex][node].used_shot = 1
            result.used_entries.append((vertex, node))
        if len(nodes) == 1:
            result.st_paths.append(StPath(nodes=tuple(nodes), owners=(), edge=channel_key(v1, v2),
                                          fusion=nodes[0]))
            return True
        hop_costs = []
        for a, b in zip(nodes, nodes[1:]):
            hop_costs.append(self.residual.cost(a, b))
            self.residual.consume(a, b, vertices=pair)
        entry_cost = self.vrm.entries[v1][nodes[0]].cost
        exit_cost = self.vrm.entries[v2][nodes[-1]].cost
        prefix = [entry_cost]
        for i, c in enumerate(hop_costs):
            prefix.append(entry_cost + sum(hop_costs[: i + 1]) + i * cz_cost)
        suffix = [0.0] * len(nodes)
        suffix[-1] = exit_cost
        for i in range(len(nodes) - 2, -1, -1):
            hops_used = len(hop_costs) - i
            suffix[i] = exit_cost + sum(hop_costs[i:]) + (hops_used - 1) * cz_cost
        pending = PendingPath(edge=(v1, v2), nodes=tuple(nodes), shot=1,
                              prefix_costs=tuple(prefix), suffix_costs=tuple(suffix))
        pendings.append(pending)
        last = len(nodes) - 1
        for i, node in enumerate(nodes):
            if i > 0:
                self.vrm.offer(v1, node, prefix[i], pending, 1, fixed=False)
            if i < last:
                self.vrm.offer(v2, node, suffix[i], pending, 1, fixed=False)
        return True

    def _pending_to_st(self, pending: PendingPath) -> StPath:
        idx = pending.fusion_index
        owners = tuple(pending.edge[0] if j < idx else pending.edge[1] for j in range(len(pending.nodes) - 1))
        return StPath(nodes=pending.nodes, owners=owners, edge=channel_key(*pending.edge),
                      fusion=pending.nodes[idx])


@dataclass
class StPlan:
    solution: Solution
    k: int
    st_paths: list[StPath]


def stp2pgsd_plan(task: DistributionTask, variant: StMetricVariant | None = None,
                  hi: int | None = None) -> StPlan:
    """Binary-search the smallest k whose expanded single pass completes."""
    from .p2pgsd import p2pgsd_plan  # local import to avoid cycle at module load

    variant = variant or StMetricVariant()
    if not task.network.is_connected():
        raise NoSolutionError("network is not connected")
    routable = [e for e in sorted(task.graph_state.edges)
                if not (task.assignment.nodes(e[0]) & task.assignment.nodes(e[1]))]
    if not routable:
        return StPlan(Solution([], [], []), 0, [])
    if hi is None:
        baseline = p2pgsd_plan(task, MemoryStrategyKind.STANDARD)
        hi = max(baseline.n_shots, 1)
    results: dict[int, StPlanResult] = {}

    def feasible(k: int) -> bool:
        res = StP2PPlanner(task, k, variant).plan()
        if res is not None:
            results[k] = res
        return res is not None

    # the flat planner's shot count is normally achievable in the expansion,
    # but its tie-breaking differs; allow a few extra layers before giving up
    cap = 2 * hi + 2
    while not feasible(hi):
        hi += 1
        if hi > cap:
            raise NoSolutionError(f"space-time search infeasible up to k={cap}")
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid + 1
    k = lo
    res = results[k]
    solution = _solution_from_st(task, k, res.st_paths)
    return StPlan(solution, k, res.st_paths)


def _solution_from_st(task: DistributionTask, k: int, st_paths: list[StPath]) -> Solution:
    """Fold edge-oriented space-time paths plus anchor chains into a solution."""
    bell = [ShotStrategy(StrategyKind.BELL, s) for s in range(1, k + 1)]
    memory = [ShotStrategy(StrategyKind.MEMORY, s) for s in range(1, k + 1)]
    views: list[PlannedPath] = []
    for path in st_paths:
        if len(path.nodes) < 2:
            if path.edge is not None:
                views.append(PlannedPath(shot=1, purpose=PathPurpose.EDGE, nodes=(path.nodes[0][0],),
                                         owners=(), edge=path.edge, fusion_node=path.nodes[0][0]))
            continue
        idx = path.nodes.index(path.fusion)
        for j, (a, b) in enumerate(zip(path.nodes, path.nodes[1:])):
            owner = path.owners[j]
            src, dst = (a, b) if j < idx else (b, a)  # flows point toward the fusion
            (n1, k1), (n2, k2) = src, dst
            if k1 == k2:
                bell[k1 - 1].add_bell_flow(n1, n2, owner)
            else:
                memory[min(k1, k2) - 1].add_memory_flow(n1, owner, forward=k2 > k1)
        views.extend(_st_path_views(path, idx))
    for v in sorted(task.graph_state.vertices):
        for n in sorted(task.assignment.nodes(v)):
            for boundary in range(1, k + 1):
                memory[boundary - 1].add_memory_flow(n, v, forward=False)
    solution = Solution(bell, memory, views)
    solution.check_invariants(task.network)
    return solution


def _st_path_views(path: StPath, fusion_idx: int) -> list[PlannedPath]:
    """One flat view per maximal same-layer run, fusion annotated where it lies."""
    views = []
    run = [path.nodes[0]]
    run_owners: list[int] = []
    for j, (a, b) in enumerate(zip(path.nodes, path.nodes[1:])):
        if a[1] == b[1]:
            run.append(b)
            run_owners.append(path.owners[j])
        else:
            if len(run) > 1:
                views.append(_flat_view(path, run, run_owners, fusion_idx))
            run = [b]
            run_owners = []
    if len(run) > 1:
        views.append(_flat_view(path, run, run_owners, fusion_idx))
    return views


def _flat_view(path: StPath, run: list[StNode], owners: list[int], fusion_idx: int) -> PlannedPath:
    fusion_node = path.nodes[fusion_idx]
    in_run = fusion_node in run
    return PlannedPath(
        shot=run[0][1],
        purpose=PathPurpose.EDGE,
        nodes=tuple(n for n, _layer in run),
        owners=tuple(owners),
        edge=path.edge,
        fusion_node=fusion_node[0] if in_run else None,
    )
