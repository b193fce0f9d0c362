"""Shot-expanded (space-time) networks and projection back to flat solutions.

A space-time node is a pair (node, layer) with layers 1..N+1: a protocol of N
shots produces N+1 snapshots.  Bell channels replicate the topology inside
each shot; memory links join consecutive snapshots of the same node and their
capacity is the node's long-term memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import (
    UNLIMITED,
    Channel,
    InvariantError,
    Network,
    PathPurpose,
    PlannedPath,
    ShotStrategy,
    Solution,
    StrategyKind,
    channel_key,
)

StNode = tuple[int, int]  # (network node, layer)

DEFAULT_MEMORY_COST = -math.log(0.8)


@dataclass
class SpacetimeNetwork:
    base: Network
    n_shots: int
    memory_cost: float = DEFAULT_MEMORY_COST

    def __post_init__(self):
        if self.n_shots < 1:
            raise InvariantError("n_shots must be >= 1")

    @property
    def st_nodes(self) -> list[StNode]:
        return [(n, k) for n in sorted(self.base.nodes) for k in range(1, self.n_shots + 2)]

    def bell_channels(self) -> list[tuple[StNode, StNode]]:
        out = []
        for k in range(1, self.n_shots + 1):
            for (a, b) in self.base.channels:
                out.append(((a, k), (b, k)))
        return out

    def memory_channels(self) -> list[tuple[StNode, StNode]]:
        out = []
        for k in range(1, self.n_shots + 1):
            for n in sorted(self.base.nodes):
                if self.base.memory_of(n) == 0:
                    continue
                out.append(((n, k), (n, k + 1)))
        return out

    def memory_capacity(self, node: int) -> int | object:
        return self.base.memory_of(node)

    def adjacency(self) -> dict[StNode, list[StNode]]:
        """Neighbors of each st-node: same-layer channel partners plus the
        node's own copies one layer up and down (when memory permits)."""
        adj: dict[StNode, list[StNode]] = {sn: [] for sn in self.st_nodes}
        for (a, k), (b, _k) in self.bell_channels():
            adj[(a, k)].append((b, k))
            adj[(b, k)].append((a, k))
        for (n, k), (n2, k2) in self.memory_channels():
            adj[(n, k)].append((n2, k2))
            adj[(n2, k2)].append((n, k))
        for sn in adj:
            adj[sn].sort()
        return adj


def build_st_network(net: Network, n_shots: int, memory_cost: float = DEFAULT_MEMORY_COST) -> SpacetimeNetwork:
    return SpacetimeNetwork(net, n_shots, memory_cost)


@dataclass
class StPath:
    """A path through the space-time network owned step-by-step by vertices."""

    nodes: tuple[StNode, ...]
    owners: tuple[int, ...]
    edge: Channel | None = None
    deliver_vertex: int | None = None
    fusion: StNode | None = None

    def __post_init__(self):
        if len(self.owners) != max(len(self.nodes) - 1, 0):
            raise InvariantError("owners must have one entry per step")
        for (n1, k1), (n2, k2) in zip(self.nodes, self.nodes[1:]):
            horizontal = k1 == k2 and n1 != n2
            vertical = n1 == n2 and abs(k1 - k2) == 1
            if not (horizontal or vertical):
                raise InvariantError(f"illegal space-time step {(n1, k1)} -> {(n2, k2)}")

    def steps(self):
        return zip(self.nodes, self.nodes[1:], self.owners)


def project_solution(st_paths: list[StPath], net: Network, n_shots: int) -> Solution:
    """Project space-time paths onto per-shot Bell and memory strategies.

    Horizontal steps become Bell flows of their layer; vertical steps become
    memory flows at the earlier snapshot.  Flow direction follows step order.
    """
    bell = [ShotStrategy(StrategyKind.BELL, k) for k in range(1, n_shots + 1)]
    memory = [ShotStrategy(StrategyKind.MEMORY, k) for k in range(1, n_shots + 1)]
    views: list[PlannedPath] = []
    for path in st_paths:
        run_nodes: list[int] = []
        run_owners: list[int] = []
        run_shot = None
        for (n1, k1), (n2, k2), owner in path.steps():
            if k1 == k2:
                if not (1 <= k1 <= n_shots):
                    raise InvariantError(f"bell step outside shots: layer {k1}")
                bell[k1 - 1].add_bell_flow(n1, n2, owner)
                if run_shot != k1 or not run_nodes or run_nodes[-1] != n1:
                    if len(run_nodes) > 1:
                        views.append(_run_view(run_shot, run_nodes, run_owners, path))
                    run_nodes = [n1]
                    run_owners = []
                    run_shot = k1
                run_nodes.append(n2)
                run_owners.append(owner)
            else:
                boundary = min(k1, k2)
                if not (1 <= boundary <= n_shots):
                    raise InvariantError(f"memory step outside shots: boundary {boundary}")
                memory[boundary - 1].add_memory_flow(n1, owner, forward=k2 > k1)
        if len(run_nodes) > 1:
            views.append(_run_view(run_shot, run_nodes, run_owners, path))
    solution = Solution(bell, memory, views)
    solution.check_invariants(net)
    return solution


def _run_view(shot: int, nodes: list[int], owners: list[int], path: StPath) -> PlannedPath:
    if path.edge is not None:
        fusion = path.fusion[0] if path.fusion is not None else None
        return PlannedPath(
            shot=shot,
            purpose=PathPurpose.EDGE,
            nodes=tuple(nodes),
            owners=tuple(owners),
            edge=path.edge,
            fusion_node=fusion,
        )
    return PlannedPath(
        shot=shot,
        purpose=PathPurpose.DELIVER,
        nodes=tuple(nodes),
        owners=tuple(owners),
        deliver_vertex=path.deliver_vertex if path.deliver_vertex is not None else owners[0],
    )
