"""Peer-to-peer planner: greedy per-shot edge implementation via the VRM.

Edges of the graph state are the files; nodes that hold a vertex's connection
(the Vertex Reaching Map) redistribute it.  A freshly routed path leaves its
channel-to-vertex assignment undecided until some node on it is needed as a
redistribution point, at which moment the path is split at that node and both
sides become fixed.
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
    Channel,
    DistributionTask,
    GsdError,
    InvariantError,
    NoSolutionError,
    PathPurpose,
    PlannedPath,
    ShotStrategy,
    Solution,
    StrategyKind,
    channel_key,
    channel_success_prob,
)


class MemoryStrategyKind(Enum):
    MINIMUM = "minimum"
    STANDARD = "standard"
    MAXIMUM = "maximum"


@dataclass
class SavedChannel:
    """A Bell pair carried over from a previous shot: unit probability, one use."""

    channel: Channel
    used: bool = False


@dataclass
class PendingPath:
    edge: tuple[int, int]  # (source-side vertex, target-side vertex)
    nodes: tuple[int, ...]
    shot: int
    prefix_costs: tuple[float, ...]  # reach cost of source vertex up to node i
    suffix_costs: tuple[float, ...]  # reach cost of target vertex down to node i
    fusion_index: Optional[int] = None

    @property
    def resolved(self) -> bool:
        return self.fusion_index is not None


@dataclass
class VrmEntry:
    cost: float
    fixed: bool
    pending: Optional[PendingPath] = None
    created_shot: int = 0
    assigned: bool = False
    used_shot: int = 0  # last shot this entry served as a path endpoint


class VRM:
    """Per-vertex map of reached nodes with reach costs and fixed flags.

    Node keys are opaque (plain nodes here, (node, layer) pairs in the
    space-time planner).
    """

    def __init__(self, seeds: dict[int, list]):
        self.entries: dict[int, dict] = {v: {} for v in sorted(seeds)}
        for v in sorted(seeds):
            for n in sorted(seeds[v]):
                self.entries[v][n] = VrmEntry(cost=0.0, fixed=True, assigned=True)

    @classmethod
    def for_task(cls, task: DistributionTask) -> "VRM":
        return cls({v: sorted(task.assignment.nodes(v)) for v in task.graph_state.vertices})

    def endpoints(self, vertex: int) -> list[tuple[int, float]]:
        return sorted((n, e.cost) for n, e in self.entries[vertex].items())

    def offer(self, vertex: int, node: int, cost: float, pending: Optional[PendingPath], shot: int, fixed: bool) -> None:
        """Insert or improve an entry; never demote a fixed entry to unfixed."""
        cur = self.entries[vertex].get(node)
        if cur is not None:
            if cur.fixed and not fixed:
                return
            if cur.fixed == fixed and cur.cost <= cost:
                return
            if fixed and not cur.fixed:
                pass  # promotion
            elif cost > cur.cost:
                return
        self.entries[vertex][node] = VrmEntry(
            cost=cost, fixed=fixed, pending=pending, created_shot=shot,
            assigned=cur.assigned if cur is not None else False,
            used_shot=cur.used_shot if cur is not None else 0,
        )

    def drop_if_pending(self, vertex: int, node: int, pending: PendingPath) -> None:
        cur = self.entries[vertex].get(node)
        if cur is not None and cur.pending is pending and not cur.assigned:
            del self.entries[vertex][node]


def fix_segment(vrm: VRM, vertex: int, branch_node: int) -> PendingPath:
    """Resolve the pending path backing `vertex`'s unfixed entry at `branch_node`.

    Channels between the source-side endpoint and the branch go to the path's
    first vertex, the rest to the second; the branch becomes a fixed holder of
    both.  Entries on the far side lose the near vertex and vice versa.
    """
    entry = vrm.entries.get(vertex, {}).get(branch_node)
    if entry is None or entry.pending is None:
        raise GsdError(f"node {branch_node} is not an unfixed entry of vertex {vertex}")
    pending = entry.pending
    if pending.resolved:
        raise GsdError("pending path already resolved")
    _resolve_pending(vrm, pending, pending.nodes.index(branch_node))
    return pending


def _resolve_pending(vrm: VRM, pending: PendingPath, idx: int) -> None:
    if pending.resolved:
        raise GsdError("pending path already resolved")
    v1, v2 = pending.edge
    nodes = pending.nodes
    pending.fusion_index = idx
    for j, node in enumerate(nodes):
        if j <= idx:
            vrm.offer(v1, node, pending.prefix_costs[j], None, pending.shot, fixed=True)
        else:
            vrm.drop_if_pending(v1, node, pending)
        if j >= idx:
            vrm.offer(v2, node, pending.suffix_costs[j], None, pending.shot, fixed=True)
        else:
            vrm.drop_if_pending(v2, node, pending)
    # clear dangling pending references now that the path is decided
    for v in (v1, v2):
        for node, e in list(vrm.entries[v].items()):
            if e.pending is pending:
                e.pending = None


HOP_EPS = 1e-6  # nudges zero-cost ties toward fewer hops


@dataclass
class ShotResidual:
    """Channel occupancy of the running shot, including carried-over pairs.

    `involved` remembers which vertices' paths already used a channel this
    shot: a later path sharing a vertex must avoid the channel, otherwise the
    two antisymmetric flows could cancel and erase the connection.
    """

    task: DistributionTask
    saved: list[SavedChannel] = field(default_factory=list)
    occupancy: dict[Channel, int] = field(default_factory=dict)
    involved: dict[Channel, set[int]] = field(default_factory=dict)

    def options(self, u: int, v: int) -> list[tuple[float, str, int]]:
        """Available ways to push one unit over (u,v): (cost, kind, index)."""
        c = channel_key(u, v)
        out = []
        net = self.task.network
        if c in net.channel_width:
            o = self.occupancy.get(c, 0)
            p = channel_success_prob(net.channel_prob[c], net.channel_width[c], o)
            if p > 0.0:
                out.append((-math.log(p) + HOP_EPS, "base", 0))
        for i, s in enumerate(self.saved):
            if s.channel == c and not s.used:
                out.append((HOP_EPS, "saved", i))
        out.sort()
        return out

    def cost(self, u: int, v: int) -> float:
        opts = self.options(u, v)
        return opts[0][0] if opts else INF_COST

    def cost_for(self, u: int, v: int, vertices: tuple[int, int]) -> float:
        c = channel_key(u, v)
        if self.involved.get(c) and (self.involved[c] & set(vertices)):
            return INF_COST
        return self.cost(u, v)

    def consume(self, u: int, v: int, vertices: tuple[int, int] | None = None) -> tuple[str, float]:
        opts = self.options(u, v)
        if not opts:
            raise InvariantError(f"no residual capacity on {(u, v)}")
        cost, kind, idx = opts[0]
        if kind == "saved":
            self.saved[idx].used = True
        else:
            c = channel_key(u, v)
            self.occupancy[c] = self.occupancy.get(c, 0) + 1
        if vertices is not None:
            self.involved.setdefault(channel_key(u, v), set()).update(vertices)
        return kind, cost

    def adjacency(self) -> dict[int, list[int]]:
        adj = self.task.network.adjacency()
        for s in self.saved:
            a, b = s.channel
            adj.setdefault(a, [])
            adj.setdefault(b, [])
            if b not in adj[a]:
                adj[a].append(b)
            if a not in adj[b]:
                adj[b].append(a)
        for n in adj:
            adj[n] = sorted(set(adj[n]))
        return adj


@dataclass
class ShotPlanResult:
    """Paths and bookkeeping of one planned shot on the flat network."""

    paths: list[PlannedPath]
    implemented: list[tuple[int, int]]
    used_entries: list[tuple[int, int]]  # (vertex, node) endpoints consumed
    saved_used: list[Channel]
    residual: "ShotResidual | None" = None


class P2PPlanner:
    """Stateful planner driving VRM, shots and memory strategies."""

    def __init__(self, task: DistributionTask, mem: MemoryStrategyKind = MemoryStrategyKind.STANDARD):
        self.task = task
        self.mem = mem
        self.vrm = VRM.for_task(task)
        self.remaining: set[tuple[int, int]] = set()
        self.local_edges: list[tuple[int, int]] = []
        for e in sorted(task.graph_state.edges):
            v1, v2 = e
            if task.assignment.nodes(v1) & task.assignment.nodes(v2):
                self.local_edges.append(e)  # implementable by a local gate, no routing
            else:
                self.remaining.add(e)
        self.memory_flows: list[list[tuple[int, int, bool]]] = []  # per boundary: (node, vertex, forward)
        self.paths: list[PlannedPath] = []
        self.shot = 0
        self.dropped_entries: list[tuple[int, int, int]] = []  # (shot, vertex, node)

    # -- single shot ------------------------------------------------------

    def degree(self, v: int) -> int:
        return sum(1 for e in self.remaining if v in e)

    def plan_shot(self, saved: Optional[list[SavedChannel]] = None,
                  initial_occupancy: Optional[dict[Channel, int]] = None) -> ShotPlanResult:
        """Greedily implement as many remaining edges as the residual allows."""
        self.shot += 1
        residual = ShotResidual(self.task, saved=list(saved or []),
                                occupancy=dict(initial_occupancy or {}))
        cz_cost = -math.log(self.task.network.cz_prob)
        result = ShotPlanResult([], [], [], [])
        pendings: list[PendingPath] = []
        processed: set[int] = set()
        # edges whose endpoint sets already meet need only a local gate; they
        # still surface as zero-length paths so an executor can realize them
        for edge in self.local_edges:
            v1, v2 = edge
            node = min(self.task.assignment.nodes(v1) & self.task.assignment.nodes(v2))
            result.paths.append(PlannedPath(
                shot=self.shot, purpose=PathPurpose.EDGE, nodes=(node,), owners=(),
                edge=edge, fusion_node=node))
            result.implemented.append(edge)
        self.local_edges = []
        while True:
            candidates = sorted(
                (v for v in self.vrm.entries if v not in processed and self.degree(v) > 0),
                key=lambda v: (-self.degree(v), v),
            )
            if not candidates:
                break
            vc = candidates[0]
            processed.add(vc)
            neighbors = sorted(
                (u for u in self.task.graph_state.neighbors(vc) if channel_key(vc, u) in self.remaining),
                key=lambda u: (-self.degree(u), u),
            )
            for u in neighbors:
                edge = channel_key(vc, u)
                if edge not in self.remaining:
                    continue
                routed = self._route_edge(vc, u, residual, cz_cost, pendings, result)
                if routed:
                    self.remaining.discard(edge)
                    result.implemented.append(edge)
        for pending in pendings:
            if not pending.resolved:
                # default resolution: whole path carries the source vertex,
                # fusion happens at the target endpoint
                _resolve_pending(self.vrm, pending, len(pending.nodes) - 1)
        for pending in pendings:
            result.paths.append(self._pending_view(pending))
        self.paths.extend(result.paths)
        result.saved_used = [s.channel for s in residual.saved if s.used]
        result.residual = residual
        return result

    def _route_edge(self, vc: int, u: int, residual: ShotResidual, cz_cost: float,
                    pendings: list[PendingPath], result: ShotPlanResult) -> bool:
        sources = self.vrm.endpoints(vc)
        targets = self.vrm.endpoints(u)
        pair = (vc, u)
        view = NetView(adjacency=residual.adjacency(),
                       cost_fn=lambda a, b: residual.cost_for(a, b, pair), cz_cost=cz_cost)
        try:
            found = modified_dijkstra(view, sources, targets)
        except NoSolutionError:
            return False
        nodes = found.nodes
        # lock in endpoint choices (splits their pending paths if unfixed)
        for vertex, node in ((vc, nodes[0]), (u, nodes[-1])):
            entry = self.vrm.entries[vertex][node]
            if entry.pending is not None:
                fix_segment(self.vrm, vertex, node)
            self.vrm.entries[vertex][node].used_shot = self.shot
            result.used_entries.append((vertex, node))
        if len(nodes) == 1:
            # both connections already meet at one node: local implementation
            result.paths.append(PlannedPath(
                shot=self.shot, purpose=PathPurpose.EDGE, nodes=tuple(nodes), owners=(),
                edge=channel_key(vc, u), fusion_node=nodes[0]))
            return True
        # consume channel capacity and snapshot per-hop costs
        hop_costs = []
        for a, b in zip(nodes, nodes[1:]):
            _kind, cost = residual.consume(a, b, vertices=pair)
            hop_costs.append(cost)
        entry_cost = self.vrm.entries[vc][nodes[0]].cost
        exit_cost = self.vrm.entries[u][nodes[-1]].cost
        prefix = [entry_cost]
        for i, c in enumerate(hop_costs):
            prefix.append(entry_cost + sum(hop_costs[: i + 1]) + i * cz_cost)
        suffix = [0.0] * len(nodes)
        suffix[-1] = exit_cost
        for i in range(len(nodes) - 2, -1, -1):
            hops_used = len(hop_costs) - i
            suffix[i] = exit_cost + sum(hop_costs[i:]) + (hops_used - 1) * cz_cost
        pending = PendingPath(
            edge=(vc, u), nodes=tuple(nodes), shot=self.shot,
            prefix_costs=tuple(prefix), suffix_costs=tuple(suffix))
        pendings.append(pending)
        # every node along the path can redistribute either vertex until fixed
        last = len(nodes) - 1
        for i, node in enumerate(nodes):
            if i > 0:
                self.vrm.offer(vc, node, prefix[i], pending, self.shot, fixed=False)
            if i < last:
                self.vrm.offer(u, node, suffix[i], pending, self.shot, fixed=False)
        return True

    def _pending_view(self, pending: PendingPath) -> PlannedPath:
        idx = pending.fusion_index
        owners = tuple(pending.edge[0] if j < idx else pending.edge[1] for j in range(len(pending.nodes) - 1))
        return PlannedPath(
            shot=pending.shot, purpose=PathPurpose.EDGE, nodes=pending.nodes, owners=owners,
            edge=channel_key(*pending.edge), fusion_node=pending.nodes[idx])

    # -- memory strategy ---------------------------------------------------

    def settle_boundary(self, boundary: int) -> list[tuple[int, int, bool]]:
        """Memory flows for `boundary` (between shot `boundary` and the next).

        Called after the shot following the boundary has been planned (or at
        protocol end), when redistribution use is known.
        """
        flows: list[tuple[int, int, bool]] = []
        held: dict[int, list[tuple[float, int, int]]] = {}
        for v in sorted(self.vrm.entries):
            for node, e in sorted(self.vrm.entries[v].items()):
                if e.assigned:
                    flows.append((node, v, False))  # anchor chains point backward
                    continue
                if not e.fixed or e.created_shot > boundary:
                    continue
                if self.mem is MemoryStrategyKind.MAXIMUM:
                    keep = True
                elif self.mem is MemoryStrategyKind.STANDARD:
                    keep = e.used_shot == boundary + 1
                else:
                    keep = False
                if keep:
                    held.setdefault(node, []).append((e.cost, v, node))
                elif self.mem is not MemoryStrategyKind.MAXIMUM:
                    del self.vrm.entries[v][node]
        # capacity check: assigned qubits claim their slot first
        anchor_load: dict[int, int] = {}
        for node, v, _fwd in flows:
            anchor_load[node] = anchor_load.get(node, 0) + 1
        for node in sorted(held):
            cap = self.task.network.memory_of(node)
            entries = sorted(held[node])
            if cap is not UNLIMITED:
                room = cap - anchor_load.get(node, 0)
                while len(entries) > max(room, 0):
                    cost, v, n = entries.pop()  # drop the highest reach-cost first
                    del self.vrm.entries[v][n]
                    self.dropped_entries.append((boundary, v, n))
            for _cost, v, n in entries:
                flows.append((n, v, True))
        # under STANDARD, unused non-assigned entries die at this boundary
        if self.mem is MemoryStrategyKind.STANDARD:
            for v in sorted(self.vrm.entries):
                for node, e in list(sorted(self.vrm.entries[v].items())):
                    if not e.assigned and e.fixed and e.created_shot <= boundary and e.used_shot != boundary + 1:
                        del self.vrm.entries[v][node]
        return sorted(flows)

    def build_solution(self) -> Solution:
        n = self.shot
        bell = [ShotStrategy(StrategyKind.BELL, k) for k in range(1, n + 1)]
        memory = [ShotStrategy(StrategyKind.MEMORY, k) for k in range(1, n + 1)]
        for path in self.paths:
            _aggregate_edge_path(bell[path.shot - 1], path)
        for k, flows in enumerate(self.memory_flows, start=1):
            for node, vertex, forward in flows:
                memory[k - 1].add_memory_flow(node, vertex, forward=forward)
        return Solution(bell, memory, list(self.paths))


def _aggregate_edge_path(strategy: ShotStrategy, path: PlannedPath) -> None:
    """Edge-path flows point from each endpoint toward the fusion node."""
    if path.purpose is not PathPurpose.EDGE or len(path.nodes) < 2:
        return
    idx = path.nodes.index(path.fusion_node)
    for j, (a, b) in enumerate(zip(path.nodes, path.nodes[1:])):
        owner = path.owners[j]
        if j < idx:
            strategy.add_bell_flow(a, b, owner)
        else:
            strategy.add_bell_flow(b, a, owner)


def p2pgsd_plan(task: DistributionTask, mem: MemoryStrategyKind = MemoryStrategyKind.STANDARD) -> Solution:
    """Plan a full distribution, shot by shot, with the given memory strategy."""
    if not task.network.is_connected():
        raise NoSolutionError("network is not connected")
    planner = P2PPlanner(task, mem)
    guard = 2 * len(planner.remaining) + 2
    while planner.remaining:
        if planner.shot >= guard:
            raise NoSolutionError("planner made no progress within the shot guard")
        result = planner.plan_shot()
        if mem is MemoryStrategyKind.MINIMUM:
            # nothing survives a boundary except the assigned anchors, so the
            # boundary can settle before the next shot is planned
            planner.memory_flows.append(planner.settle_boundary(planner.shot))
        elif planner.shot >= 2:
            planner.memory_flows.append(planner.settle_boundary(planner.shot - 1))
        if not result.implemented and planner.remaining:
            raise NoSolutionError("no edge could be implemented this shot")
    if planner.shot == 0:
        return Solution([], [], [])
    if mem is not MemoryStrategyKind.MINIMUM:
        planner.memory_flows.append(planner.settle_boundary(planner.shot))
    return planner.build_solution()
