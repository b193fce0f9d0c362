"""Ground-truth checks: reachable-set validity, brute-force shot oracle, bounds.

The oracle is deliberately independent of every planner: it works directly on
reach sets and per-channel capacity budgets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import (
    UNLIMITED,
    Channel,
    DistributionTask,
    GsdError,
    Solution,
    channel_key,
)

StNode = tuple[int, int]


def reachable_nodes(solution: Solution, task: DistributionTask, vertex: int) -> set[StNode]:
    """Fixed point of the flow-following recursion for one vertex.

    Starts from the assigned node(s) in the final snapshot and follows arcs
    (Bell within a shot, memory between snapshots) that carry positive flow
    for the vertex, in the direction of the flow.
    """
    if vertex not in task.graph_state.vertices:
        raise GsdError(f"unknown vertex {vertex}")
    n_shots = solution.n_shots
    seeds = {(n, n_shots + 1) for n in task.assignment.nodes(vertex)}
    reached = set(seeds)
    frontier = list(seeds)
    adjacency = task.network.adjacency()
    while frontier:
        node, layer = frontier.pop()
        # bell arcs inside this layer
        if 1 <= layer <= n_shots:
            strategy = solution.bell[layer - 1]
            for other in adjacency.get(node, ()):  # sorted by construction
                if strategy.bell_flow(node, other, vertex) > 0 and (other, layer) not in reached:
                    reached.add((other, layer))
                    frontier.append((other, layer))
        # memory arc to the next snapshot (boundary `layer`)
        if layer <= n_shots:
            if solution.memory[layer - 1].memory_flow(node, vertex) > 0 and (node, layer + 1) not in reached:
                reached.add((node, layer + 1))
                frontier.append((node, layer + 1))
        # memory arc to the previous snapshot (boundary `layer - 1`)
        if layer >= 2:
            if solution.memory[layer - 2].memory_flow(node, vertex) < 0 and (node, layer - 1) not in reached:
                reached.add((node, layer - 1))
                frontier.append((node, layer - 1))
    return reached


@dataclass
class Verdict:
    ok: bool
    witnesses: dict[Channel, StNode]
    failing_edge: Channel | None = None

    def __bool__(self):
        return self.ok


def is_valid_solution(solution: Solution, task: DistributionTask) -> Verdict:
    """True iff every graph-state edge's reachable sets intersect."""
    solution.check_invariants(task.network)
    reach: dict[int, set[StNode]] = {}
    witnesses: dict[Channel, StNode] = {}
    for edge in sorted(task.graph_state.edges):
        v1, v2 = edge
        if v1 not in reach:
            reach[v1] = reachable_nodes(solution, task, v1)
        if v2 not in reach:
            reach[v2] = reachable_nodes(solution, task, v2)
        meet = reach[v1] & reach[v2]
        if not meet:
            return Verdict(False, witnesses, failing_edge=edge)
        witnesses[edge] = min(meet)
    return Verdict(True, witnesses)


# ---------------------------------------------------------------------------
# Brute-force minimum-shot oracle (tiny instances)
# ---------------------------------------------------------------------------

_MAX_NODES = 5
_MAX_VERTICES = 4
_MAX_N = 3


def brute_force_min_shots(task: DistributionTask, max_n: int = _MAX_N) -> int | None:
    """Least N <= max_n admitting a valid solution, or None.

    Restricted to width-1 channels and unlimited memory.  With memory
    unconstrained, a valid N-shot solution exists exactly when each channel
    can be granted to vertices at most N times in total such that, per
    graph-state edge, the two endpoint trees (grown from the assigned nodes
    through granted channels) share a node: parking a connection at a node is
    free, so only cumulative channel budgets matter.  The search is a
    depth-first branch over meeting nodes and residual paths with capacity
    pruning.
    """
    net = task.network
    if len(net.nodes) > _MAX_NODES:
        raise GsdError(f"oracle limited to {_MAX_NODES} nodes")
    if len(task.graph_state.vertices) > _MAX_VERTICES:
        raise GsdError(f"oracle limited to {_MAX_VERTICES} vertices")
    if max_n > _MAX_N:
        raise GsdError(f"oracle limited to {_MAX_N} shots")
    if any(w != 1 for w in net.channel_width.values()):
        raise GsdError("oracle requires all channel widths to be 1")
    if any(m is not UNLIMITED for m in net.node_memory.values()):
        raise GsdError("oracle requires unlimited memory")

    edges = sorted(task.graph_state.edges)
    if not edges:
        return 0
    if all(task.assignment.nodes(a) & task.assignment.nodes(b) for a, b in edges):
        return 0
    adjacency = net.adjacency()
    channels = sorted(net.channel_width)

    for n in range(1, max_n + 1):
        caps = {c: n for c in channels}
        reach0 = {v: frozenset(task.assignment.nodes(v)) for v in sorted(task.graph_state.vertices)}
        if _oracle_dfs(edges, 0, reach0, caps, adjacency, set()):
            return n
    return None


def _oracle_dfs(edges, idx, reach, caps, adjacency, visited) -> bool:
    while idx < len(edges) and reach[edges[idx][0]] & reach[edges[idx][1]]:
        idx += 1
    if idx == len(edges):
        return True
    state = (idx, tuple(sorted((v, s) for v, s in reach.items())), tuple(sorted(caps.items())))
    if state in visited:
        return False
    visited.add(state)
    v1, v2 = edges[idx]
    nodes = sorted(adjacency)
    for meet in nodes:
        for p1 in _extension_paths(reach[v1], meet, caps, adjacency):
            caps1 = _consume(caps, p1)
            reach1 = dict(reach)
            reach1[v1] = reach[v1] | frozenset(p1)
            for p2 in _extension_paths(reach1[v2], meet, caps1, adjacency):
                caps2 = _consume(caps1, p2)
                reach2 = dict(reach1)
                reach2[v2] = reach1[v2] | frozenset(p2)
                if _oracle_dfs(edges, idx, reach2, caps2, adjacency, visited):
                    return True
    return False


def _consume(caps, path):
    if len(path) < 2:
        return caps
    new = dict(caps)
    for a, b in zip(path, path[1:]):
        new[channel_key(a, b)] -= 1
    return new


def _extension_paths(source_set, meet, caps, adjacency):
    """Simple paths from the reached set to the meeting node, shortest first."""
    if meet in source_set:
        yield ()
        return
    results = []

    def dfs(node, path, seen):
        if node == meet:
            results.append(tuple(path))
            return
        for nxt in adjacency[node]:
            if nxt in seen or (nxt in source_set):
                continue
            c = channel_key(node, nxt)
            if caps.get(c, 0) - _path_uses(path, c) < 1:
                continue
            path.append(nxt)
            seen.add(nxt)
            dfs(nxt, path, seen)
            seen.discard(nxt)
            path.pop()

    for start in sorted(source_set):
        dfs(start, [start], {start})
    results.sort(key=lambda p: (len(p), p))
    yield from results


def _path_uses(path, channel):
    return sum(1 for a, b in zip(path, path[1:]) if channel_key(a, b) == channel)


def check_upper_bound(task: DistributionTask) -> bool:
    """Does the oracle confirm the floor(|V_S|/2) shot bound for this task?"""
    if not task.network.is_connected():
        raise GsdError("bound check needs a connected network")
    bound = len(task.graph_state.vertices) // 2
    if bound == 0:
        return not task.graph_state.edges
    result = brute_force_min_shots(task, max_n=min(bound, _MAX_N))
    return result is not None and result <= bound
