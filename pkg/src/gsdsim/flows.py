"""Graph-algorithm kernel: multi-endpoint Dijkstra, max-flow, MCMF, decomposition.

All algorithms iterate adjacency in insertion order and break ties on node
ids, so results are deterministic for a fixed construction order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .model import COST_EPS, INF_COST, GsdError, InvariantError, NoSolutionError


class Arc:
    __slots__ = ("src", "dst", "cap", "cost", "flow", "rev")

    def __init__(self, src, dst, cap: int, cost: float):
        self.src = src
        self.dst = dst
        self.cap = cap
        self.cost = cost
        self.flow = 0
        self.rev: "Arc" = None  # type: ignore[assignment]

    def residual(self) -> int:
        return self.cap - self.flow

    def __repr__(self):
        return f"Arc({self.src}->{self.dst}, {self.flow}/{self.cap}, cost={self.cost})"


class FlowGraph:
    """Directed flow network over hashable node labels."""

    def __init__(self):
        self.adj: dict = {}
        self.arcs: list[Arc] = []

    def add_node(self, n) -> None:
        self.adj.setdefault(n, [])

    def add_arc(self, src, dst, cap: int, cost: float = 0.0) -> Arc:
        """Directed arc with a zero-capacity reverse residual."""
        return self._add_pair(src, dst, cap, 0, cost)

    def add_undirected(self, a, b, cap: int, cost: float = 0.0) -> Arc:
        """Channel usable in either direction with one shared capacity budget.

        Modeled as an arc pair whose reverse residual also has capacity `cap`;
        net flow in one direction then never exceeds `cap` and opposite uses
        cancel instead of double-counting the hardware.
        """
        return self._add_pair(a, b, cap, cap, cost)

    def _add_pair(self, src, dst, cap_fwd: int, cap_rev: int, cost: float) -> Arc:
        if cap_fwd < 0 or cap_rev < 0:
            raise InvariantError("arc capacity must be non-negative")
        if not math.isfinite(cost):
            raise InvariantError("arc cost must be finite")
        self.add_node(src)
        self.add_node(dst)
        fwd = Arc(src, dst, cap_fwd, cost)
        rev = Arc(dst, src, cap_rev, -cost)
        fwd.rev = rev
        rev.rev = fwd
        self.adj[src].append(fwd)
        self.adj[dst].append(rev)
        self.arcs.append(fwd)
        return fwd

    def nodes(self):
        return list(self.adj)


def max_flow(g: FlowGraph, source, sink) -> int:
    """Shortest-augmenting-path (BFS) max flow; integral."""
    if source not in g.adj or sink not in g.adj:
        return 0
    total = 0
    while True:
        pred: dict = {source: None}
        queue = [source]
        qi = 0
        while qi < len(queue) and sink not in pred:
            u = queue[qi]
            qi += 1
            for arc in g.adj[u]:
                if arc.residual() > 0 and arc.dst not in pred:
                    pred[arc.dst] = arc
                    queue.append(arc.dst)
        if sink not in pred:
            return total
        bottleneck = None
        node = sink
        while pred[node] is not None:
            arc = pred[node]
            bottleneck = arc.residual() if bottleneck is None else min(bottleneck, arc.residual())
            node = arc.src
        node = sink
        while pred[node] is not None:
            arc = pred[node]
            arc.flow += bottleneck
            arc.rev.flow -= bottleneck
            node = arc.src
        total += bottleneck


def min_cost_max_flow(g: FlowGraph, source, sink) -> tuple[int, float]:
    """Successive shortest paths with Johnson potentials; integral and optimal.

    Requires non-negative costs on every arc with usable capacity; undirected
    channel pairs (whose residuals carry negated costs) are only safe here
    when their cost is zero.
    """
    for arc in g.arcs:
        if arc.cost < 0 or (arc.rev.cap > 0 and arc.rev.cost < 0):
            raise GsdError("negative-cost usable arcs are not supported")
    if source not in g.adj or sink not in g.adj:
        return 0, 0.0
    potential: dict = {n: 0.0 for n in g.adj}
    total_flow = 0
    total_cost = 0.0
    while True:
        dist: dict = {source: 0.0}
        pred: dict = {}
        seq = 0
        heap = [(0.0, _tie(source), seq, source)]
        done = set()
        while heap:
            d, _t, _s, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for arc in g.adj[u]:
                if arc.residual() <= 0:
                    continue
                v = arc.dst
                nd = d + arc.cost + potential[u] - potential[v]
                if v not in dist or nd < dist[v] - COST_EPS:
                    dist[v] = nd
                    pred[v] = arc
                    seq += 1
                    heapq.heappush(heap, (nd, _tie(v), seq, v))
        if sink not in done:
            return total_flow, total_cost
        for n in done:
            potential[n] += dist[n]
        bottleneck = None
        node = sink
        while node != source:
            arc = pred[node]
            bottleneck = arc.residual() if bottleneck is None else min(bottleneck, arc.residual())
            node = arc.src
        node = sink
        while node != source:
            arc = pred[node]
            arc.flow += bottleneck
            arc.rev.flow -= bottleneck
            total_cost += bottleneck * arc.cost
            node = arc.src
        total_flow += bottleneck


def _tie(node):
    return repr(node)


def flow_decomposition(g: FlowGraph, source, sink) -> list[list]:
    """Decompose the current flow into unit source-sink paths (node lists).

    Cycles in the flow are dropped.  The positive net flow per arc is consumed
    greedily along lexicographically-first paths, so the result is
    deterministic.
    """
    remaining: dict = {}
    out: dict = {}
    for arc in g.arcs:
        f = arc.flow
        if f > 0:
            remaining[(arc.src, arc.dst)] = remaining.get((arc.src, arc.dst), 0) + f
        elif f < 0:
            remaining[(arc.dst, arc.src)] = remaining.get((arc.dst, arc.src), 0) - f
    # net out opposite directions (can appear with undirected channel pairs)
    for (u, v) in sorted(remaining, key=_pair_tie):
        if remaining.get((u, v), 0) > 0 and remaining.get((v, u), 0) > 0:
            cancel = min(remaining[(u, v)], remaining[(v, u)])
            remaining[(u, v)] -= cancel
            remaining[(v, u)] -= cancel
    for (u, v), f in remaining.items():
        if f > 0:
            out.setdefault(u, []).append(v)
    for u in out:
        out[u].sort(key=_tie)

    # conservation check on the netted flow
    balance: dict = {}
    for (u, v), f in remaining.items():
        if f > 0:
            balance[u] = balance.get(u, 0) + f
            balance[v] = balance.get(v, 0) - f
    for n, b in balance.items():
        if n not in (source, sink) and b != 0:
            raise InvariantError(f"flow not conserved at {n}: {b}")

    paths = []
    while balance.get(source, 0) > 0:
        path = [source]
        node = source
        seen = {source}
        while node != sink:
            nxt = None
            for v in out.get(node, []):
                if remaining.get((node, v), 0) > 0:
                    nxt = v
                    break
            if nxt is None:
                raise InvariantError("decomposition stuck: no outgoing flow")
            if nxt in seen:
                # found a cycle: cancel one unit around it and resume the walk
                i = path.index(nxt)
                for a, b in zip(path[i:], path[i + 1:]):
                    remaining[(a, b)] -= 1
                remaining[(node, nxt)] -= 1
                for dropped in path[i + 1:]:
                    seen.discard(dropped)
                path = path[: i + 1]
                node = nxt
                continue
            remaining[(node, nxt)] -= 1
            path.append(nxt)
            seen.add(nxt)
            node = nxt
        balance[source] -= 1
        paths.append(path)
    return paths


def _pair_tie(pair):
    return (_tie(pair[0]), _tie(pair[1]))


# ---------------------------------------------------------------------------
# Modified multi-endpoint Dijkstra
# ---------------------------------------------------------------------------

@dataclass
class NetView:
    """Residual per-shot view of a network for path search.

    `arc_cost(u, v)` returns the current cost of pushing one more unit from u
    to v (infinite when the link is exhausted), `cz_cost` the surcharge for
    fusing consecutive Bell segments at a node.  `chain_fn` marks which arcs
    are Bell links (memory hops store a qubit and need no gate).  Occupancy
    is owned by the caller.
    """

    adjacency: dict
    cost_fn: "callable"
    cz_cost: float = 0.0
    chain_fn: "callable" = None  # type: ignore[assignment]

    def arc_cost(self, u, v) -> float:
        return self.cost_fn(u, v)

    def chains(self, u, v) -> bool:
        return True if self.chain_fn is None else self.chain_fn(u, v)


@dataclass
class DijkstraResult:
    source: int
    target: int
    nodes: list[int]
    cost: float
    path_cost: float = 0.0   # cost excluding entry/exit


def modified_dijkstra(
    view: NetView,
    sources: list[tuple[int, float]],
    targets: list[tuple[int, float]],
) -> DijkstraResult:
    """Cheapest connection between two weighted endpoint sets.

    Total cost is entry + sum of link costs + one cz surcharge per internal
    continuation + exit.  A node present in both sets yields a zero-length
    path.  Ties within the cost tolerance resolve toward smaller node ids.
    """
    if not sources or not targets:
        raise NoSolutionError("empty endpoint set")
    exit_cost = {}
    for n, c in targets:
        if c < 0:
            raise GsdError("exit costs must be non-negative")
        if n not in exit_cost or c < exit_cost[n]:
            exit_cost[n] = c

    # state: (node, moved) where moved marks arrival via at least one Bell link
    dist: dict[tuple[int, bool], float] = {}
    origin: dict[tuple[int, bool], int] = {}
    pred: dict[tuple[int, bool], tuple[int, bool] | None] = {}
    heap: list = []
    seq = 0
    for n, c in sorted(sources):
        if c < 0:
            raise GsdError("entry costs must be non-negative")
        state = (n, False)
        if state not in dist or c < dist[state]:
            dist[state] = c
            origin[state] = n
            pred[state] = None
            seq += 1
            heapq.heappush(heap, (c, n, False, seq))

    best: DijkstraResult | None = None
    settled = set()
    while heap:
        d, node, moved, _s = heapq.heappop(heap)
        state = (node, moved)
        if state in settled or d > dist.get(state, INF_COST) + COST_EPS:
            continue
        settled.add(state)
        if node in exit_cost:
            total = d + exit_cost[node]
            if best is None or total < best.cost - COST_EPS or (
                abs(total - best.cost) <= COST_EPS and node < best.target
            ):
                nodes = _trace(pred, origin, state)
                best = DijkstraResult(nodes[0], node, nodes, total, path_cost=d - dist[(nodes[0], False)])
        if best is not None and d > best.cost + COST_EPS:
            break
        for v in view.adjacency.get(node, ()):  # insertion order == sorted by construction
            w = view.arc_cost(node, v)
            if w >= INF_COST:
                continue
            chains = view.chains(node, v)
            surcharge = view.cz_cost if (moved and chains) else 0.0
            nd = d + surcharge + w
            nstate = (v, moved or chains)
            old = dist.get(nstate, INF_COST)
            if nd < old - COST_EPS:
                dist[nstate] = nd
                origin[nstate] = origin[state]
                pred[nstate] = state
                seq += 1
                heapq.heappush(heap, (nd, v, moved or chains, seq))
    if best is None:
        raise NoSolutionError("no target reachable")
    return best


def _trace(pred, origin, state) -> list[int]:
    nodes = []
    cur = state
    while cur is not None:
        nodes.append(cur[0])
        cur = pred[cur]
    nodes.reverse()
    return nodes
