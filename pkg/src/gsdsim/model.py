"""Core domain types: networks, graph states, tasks, strategies and metrics.

A network is an undirected multigraph in disguise: parallel links between two
nodes are folded into a single channel with an integer width.  Long-term
memory is tracked per node and may be unlimited.  Strategies are signed
per-vertex integer flows on oriented channels (Bell) or on per-node memory
links (one per shot boundary), and a solution bundles one Bell strategy and
one memory strategy per shot together with the executable path view.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

COST_EPS = 1e-9
INF_COST = math.inf


class GsdError(Exception):
    """Base error for this package."""


class InvariantError(GsdError):
    """A structural invariant of a domain object was violated."""


class NoSolutionError(GsdError):
    """A planner could not produce a solution for the given task."""


class _Unlimited:
    """Sentinel for unbounded node memory (not a large integer on purpose)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Unlimited"


UNLIMITED = _Unlimited()

Channel = tuple[int, int]


def channel_key(a: int, b: int) -> Channel:
    """Canonical unordered channel key."""
    if a == b:
        raise InvariantError(f"self-loop channel at node {a}")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class OrientedChannel:
    tail: int
    head: int

    @property
    def channel(self) -> Channel:
        return channel_key(self.tail, self.head)

    def reversed(self) -> "OrientedChannel":
        return OrientedChannel(self.head, self.tail)


@dataclass
class Network:
    """Topology plus channel widths/probabilities and node memory budgets."""

    nodes: frozenset[int]
    channel_width: dict[Channel, int]
    channel_prob: dict[Channel, float]
    node_memory: dict[int, int | _Unlimited]
    cz_prob: float = 1.0

    def __post_init__(self):
        self.nodes = frozenset(self.nodes)
        for c, w in self.channel_width.items():
            a, b = c
            if channel_key(a, b) != c:
                raise InvariantError(f"channel {c} is not in canonical order")
            if a not in self.nodes or b not in self.nodes:
                raise InvariantError(f"channel {c} has undeclared endpoint")
            if w < 1:
                raise InvariantError(f"channel {c} has width {w} < 1")
            p = self.channel_prob.get(c)
            if p is None or not (0.0 < p <= 1.0):
                raise InvariantError(f"channel {c} needs probability in (0,1], got {p}")
        if set(self.channel_prob) != set(self.channel_width):
            raise InvariantError("channel_prob and channel_width must cover the same channels")
        for n, m in self.node_memory.items():
            if n not in self.nodes:
                raise InvariantError(f"memory declared for undeclared node {n}")
            if m is not UNLIMITED and (not isinstance(m, int) or m < 0):
                raise InvariantError(f"node {n} memory must be a non-negative int or UNLIMITED")
        if not (0.0 < self.cz_prob <= 1.0):
            raise InvariantError(f"cz_prob must be in (0,1], got {self.cz_prob}")

    @property
    def channels(self) -> list[Channel]:
        return sorted(self.channel_width)

    def memory_of(self, node: int) -> int | _Unlimited:
        return self.node_memory.get(node, UNLIMITED)

    def width(self, channel: Channel) -> int:
        return self.channel_width[channel]

    def prob(self, channel: Channel) -> float:
        return self.channel_prob[channel]

    def neighbors(self, node: int) -> list[int]:
        out = []
        for (a, b) in self.channel_width:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {n: [] for n in sorted(self.nodes)}
        for (a, b) in sorted(self.channel_width):
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        adj = self.adjacency()
        start = min(self.nodes)
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.nodes)

    def copy(self) -> "Network":
        return Network(
            nodes=self.nodes,
            channel_width=dict(self.channel_width),
            channel_prob=dict(self.channel_prob),
            node_memory=dict(self.node_memory),
            cz_prob=self.cz_prob,
        )


@dataclass
class GraphState:
    """Undirected simple graph defining the target entangled state."""

    vertices: frozenset[int]
    edges: frozenset[Channel]

    def __post_init__(self):
        self.vertices = frozenset(self.vertices)
        canon = set()
        for (a, b) in self.edges:
            if channel_key(a, b) != (a, b):
                raise InvariantError(f"edge {(a, b)} is not in canonical order")
            if a not in self.vertices or b not in self.vertices:
                raise InvariantError(f"edge {(a, b)} has undeclared endpoint")
            canon.add((a, b))
        self.edges = frozenset(canon)

    def degree(self, v: int) -> int:
        return sum(1 for e in self.edges if v in e)

    def neighbors(self, v: int) -> list[int]:
        out = [b if a == v else a for (a, b) in self.edges if v in (a, b)]
        return sorted(out)

    def copy(self) -> "GraphState":
        return GraphState(self.vertices, self.edges)


class Assignment:
    """Map from graph-state vertices to their destination node(s).

    The base form maps each vertex to a single node.  The adaptive protocol
    widens images to node sets (nodes currently holding a vertex's
    connection); `node()` always returns the primary destination.
    """

    def __init__(self, mapping: Mapping[int, int | Iterable[int]]):
        self._primary: dict[int, int] = {}
        self._sets: dict[int, frozenset[int]] = {}
        for v, target in mapping.items():
            if isinstance(target, int):
                self._primary[v] = target
                self._sets[v] = frozenset((target,))
            else:
                nodes = tuple(target)
                if not nodes:
                    raise InvariantError(f"vertex {v} mapped to an empty node set")
                self._primary[v] = nodes[0]
                self._sets[v] = frozenset(nodes)

    @property
    def vertices(self) -> frozenset[int]:
        return frozenset(self._primary)

    def node(self, v: int) -> int:
        return self._primary[v]

    def nodes(self, v: int) -> frozenset[int]:
        return self._sets[v]

    def as_dict(self) -> dict[int, list[int]]:
        return {v: sorted(self._sets[v], key=lambda n: (n != self._primary[v], n)) for v in sorted(self._sets)}

    def extended(self, v: int, extra: Iterable[int]) -> "Assignment":
        """Return a copy where vertex v's image gains `extra` nodes."""
        d = {u: list(self.as_dict()[u]) for u in self._primary}
        for n in extra:
            if n not in d[v]:
                d[v].append(n)
        return Assignment(d)

    def __eq__(self, other):
        return isinstance(other, Assignment) and self._primary == other._primary and self._sets == other._sets

    def __repr__(self):
        return f"Assignment({self.as_dict()})"


@dataclass
class DistributionTask:
    network: Network
    graph_state: GraphState
    assignment: Assignment

    def __post_init__(self):
        if self.assignment.vertices != self.graph_state.vertices:
            raise InvariantError("assignment domain must equal the graph-state vertex set")
        for v in self.graph_state.vertices:
            for n in self.assignment.nodes(v):
                if n not in self.network.nodes:
                    raise InvariantError(f"vertex {v} assigned to undeclared node {n}")


class StrategyKind(Enum):
    BELL = "bell"
    MEMORY = "memory"


class ShotStrategy:
    """Per-shot signed integer flows, stored once per unordered link.

    Bell flows are keyed by canonical channel; a positive value means flow
    from the channel's smaller endpoint toward the larger one.  Memory flows
    are keyed by node; a positive value means flow forward in time (the node
    holds the vertex across this shot boundary).
    """

    def __init__(self, kind: StrategyKind, shot: int):
        if shot < 1:
            raise InvariantError(f"shot index must be >= 1, got {shot}")
        self.kind = kind
        self.shot = shot
        self._flow: dict[tuple, int] = {}

    def add_bell_flow(self, tail: int, head: int, vertex: int, amount: int = 1) -> None:
        if self.kind is not StrategyKind.BELL:
            raise InvariantError("bell flow on a memory strategy")
        c = channel_key(tail, head)
        sign = 1 if (tail, head) == c else -1
        key = (c, vertex)
        self._flow[key] = self._flow.get(key, 0) + sign * amount
        if self._flow[key] == 0:
            del self._flow[key]

    def add_memory_flow(self, node: int, vertex: int, forward: bool = True, amount: int = 1) -> None:
        if self.kind is not StrategyKind.MEMORY:
            raise InvariantError("memory flow on a bell strategy")
        key = (node, vertex)
        self._flow[key] = self._flow.get(key, 0) + (amount if forward else -amount)
        if self._flow[key] == 0:
            del self._flow[key]

    def bell_flow(self, tail: int, head: int, vertex: int) -> int:
        c = channel_key(tail, head)
        sign = 1 if (tail, head) == c else -1
        return sign * self._flow.get((c, vertex), 0)

    def memory_flow(self, node: int, vertex: int) -> int:
        return self._flow.get((node, vertex), 0)

    def items(self):
        """Yield ((link, vertex), signed flow) sorted for determinism."""
        return sorted(self._flow.items())

    def link_usage(self) -> dict:
        """Total |flow| summed over vertices, per link."""
        usage: dict = {}
        for (link, _v), f in self._flow.items():
            usage[link] = usage.get(link, 0) + abs(f)
        return usage

    def check_capacity(self, network: Network) -> None:
        usage = self.link_usage()
        if self.kind is StrategyKind.BELL:
            for c, used in sorted(usage.items()):
                if c not in network.channel_width:
                    raise InvariantError(f"flow on unknown channel {c}")
                if used > network.channel_width[c]:
                    raise InvariantError(
                        f"shot {self.shot}: channel {c} carries {used} > width {network.channel_width[c]}"
                    )
        else:
            for n, used in sorted(usage.items()):
                cap = network.memory_of(n)
                if cap is not UNLIMITED and used > cap:
                    raise InvariantError(f"shot {self.shot}: node {n} holds {used} > memory {cap}")

    def total_abs_flow(self) -> int:
        return sum(abs(f) for f in self._flow.values())

    def to_jsonable(self) -> list:
        out = []
        for (link, vertex), f in self.items():
            if self.kind is StrategyKind.BELL:
                out.append([list(link), vertex, f])
            else:
                out.append([link, vertex, f])
        return out


class PathPurpose(Enum):
    EDGE = "edge"
    DELIVER = "deliver"


@dataclass
class PlannedPath:
    """One executable path: channels in order plus per-channel owning vertex.

    For an EDGE path the fusion node is where the two vertex segments meet;
    channels before it (in path order) belong to the first owner, the rest to
    the second.  A DELIVER path ships one vertex and owns every channel.
    """

    shot: int
    purpose: PathPurpose
    nodes: tuple[int, ...]
    owners: tuple[int, ...]
    edge: Channel | None = None
    deliver_vertex: int | None = None
    fusion_node: int | None = None

    def __post_init__(self):
        if len(self.owners) != max(len(self.nodes) - 1, 0):
            raise InvariantError("owners must have one entry per channel")
        if self.purpose is PathPurpose.EDGE and self.edge is None:
            raise InvariantError("edge path without an edge")
        if self.purpose is PathPurpose.DELIVER and self.deliver_vertex is None:
            raise InvariantError("delivery path without a vertex")

    @property
    def channels(self) -> list[Channel]:
        return [channel_key(a, b) for a, b in zip(self.nodes, self.nodes[1:])]

    def to_jsonable(self) -> dict:
        return {
            "shot": self.shot,
            "purpose": self.purpose.value,
            "nodes": list(self.nodes),
            "owners": list(self.owners),
            "edge": list(self.edge) if self.edge else None,
            "deliver_vertex": self.deliver_vertex,
            "fusion_node": self.fusion_node,
        }


@dataclass
class Solution:
    bell: list[ShotStrategy]
    memory: list[ShotStrategy]
    paths: list[PlannedPath] = field(default_factory=list)

    def __post_init__(self):
        if len(self.bell) != len(self.memory):
            raise InvariantError("bell and memory strategy lists must have equal length")
        for i, (b, m) in enumerate(zip(self.bell, self.memory), start=1):
            if b.shot != i or m.shot != i:
                raise InvariantError("strategies must be ordered by shot index starting at 1")
            if b.kind is not StrategyKind.BELL or m.kind is not StrategyKind.MEMORY:
                raise InvariantError("strategy kinds mismatch their slots")

    @property
    def n_shots(self) -> int:
        return len(self.bell)

    def check_invariants(self, network: Network) -> None:
        for s in self.bell:
            s.check_capacity(network)
        for s in self.memory:
            s.check_capacity(network)


@dataclass(frozen=True)
class Metrics:
    shots: int
    bell_pairs: int
    cum_memory: int

    def __post_init__(self):
        if self.shots < 0 or self.bell_pairs < 0 or self.cum_memory < 0:
            raise InvariantError("metrics must be non-negative")

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.shots + other.shots, self.bell_pairs + other.bell_pairs, self.cum_memory + other.cum_memory)


def compute_metrics(solution: Solution, network: Network | None = None) -> Metrics:
    """Count shots, Bell-pair usage and cumulative memory of a solution.

    Each undirected link is stored once, so the sum of absolute flows is
    already the half-sum over both orientations.
    """
    if network is not None:
        solution.check_invariants(network)
    bell = sum(s.total_abs_flow() for s in solution.bell)
    mem = sum(s.total_abs_flow() for s in solution.memory)
    return Metrics(shots=solution.n_shots, bell_pairs=bell, cum_memory=mem)


def channel_success_prob(p: float, width: int, occupied: int) -> float:
    """Probability that a channel yields at least one more Bell pair when
    `occupied` of its slots are already claimed by higher-priority paths."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"probability out of range: {p}")
    if occupied < 0 or occupied > width:
        raise ValueError(f"occupied={occupied} outside [0, {width}]")
    if occupied == width:
        return 0.0
    # P(#Bell >= occupied+1) with #Bell ~ Binomial(width, p)
    total = 0.0
    for i in range(occupied + 1, width + 1):
        total += math.comb(width, i) * p**i * (1.0 - p) ** (width - i)
    return min(total, 1.0)


def path_cost(link_probs: Iterable[float], cz_count: int, cz_prob: float) -> float:
    """Additive negative-log cost of consuming the given links and CZ gates."""
    if cz_count < 0:
        raise ValueError("cz_count must be non-negative")
    if not (0.0 < cz_prob <= 1.0):
        raise ValueError(f"cz_prob must be in (0,1], got {cz_prob}")
    cost = 0.0
    for p in link_probs:
        if p <= 0.0:
            return INF_COST
        if p > 1.0:
            raise ValueError(f"link probability > 1: {p}")
        cost += -math.log(p)
    cost += cz_count * -math.log(cz_prob)
    return cost


# ---------------------------------------------------------------------------
# Task file schema (JSON)
# ---------------------------------------------------------------------------

def task_to_jsonable(task: DistributionTask) -> dict:
    net = task.network
    channels = [
        {"a": a, "b": b, "width": net.channel_width[(a, b)], "prob": net.channel_prob[(a, b)]}
        for (a, b) in net.channels
    ]
    memory = {
        str(n): ("unlimited" if net.memory_of(n) is UNLIMITED else net.memory_of(n))
        for n in sorted(net.nodes)
        if n in net.node_memory
    }
    return {
        "nodes": sorted(net.nodes),
        "channels": channels,
        "memory": memory,
        "cz_prob": net.cz_prob,
        "graph_state": {
            "vertices": sorted(task.graph_state.vertices),
            "edges": [list(e) for e in sorted(task.graph_state.edges)],
        },
        "assignment": {str(v): nodes for v, nodes in task.assignment.as_dict().items()},
    }


def task_from_jsonable(data: dict) -> DistributionTask:
    try:
        nodes = frozenset(int(n) for n in data["nodes"])
        width = {}
        prob = {}
        for ch in data["channels"]:
            c = channel_key(int(ch["a"]), int(ch["b"]))
            width[c] = int(ch["width"])
            prob[c] = float(ch["prob"])
        memory: dict[int, int | _Unlimited] = {}
        for n, m in data.get("memory", {}).items():
            memory[int(n)] = UNLIMITED if m == "unlimited" else int(m)
        net = Network(nodes, width, prob, memory, cz_prob=float(data.get("cz_prob", 1.0)))
        gs = GraphState(
            frozenset(int(v) for v in data["graph_state"]["vertices"]),
            frozenset(channel_key(int(a), int(b)) for a, b in data["graph_state"]["edges"]),
        )
        raw_assign = data["assignment"]
        assignment = Assignment({
            int(v): (int(t) if isinstance(t, int) else [int(x) for x in t]) for v, t in raw_assign.items()
        })
    except (KeyError, TypeError, ValueError) as exc:
        raise GsdError(f"malformed task file: {exc}") from exc
    return DistributionTask(net, gs, assignment)


def save_task(task: DistributionTask, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(task_to_jsonable(task), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_task(path: str) -> DistributionTask:
    with open(path) as fh:
        return task_from_jsonable(json.load(fh))


def solution_to_jsonable(solution: Solution) -> dict:
    return {
        "n_shots": solution.n_shots,
        "bell": [s.to_jsonable() for s in solution.bell],
        "memory": [s.to_jsonable() for s in solution.memory],
        "paths": [p.to_jsonable() for p in solution.paths],
    }


def solution_from_jsonable(data: dict) -> Solution:
    n = int(data["n_shots"])
    bell = []
    memory = []
    for i in range(1, n + 1):
        b = ShotStrategy(StrategyKind.BELL, i)
        for link, vertex, f in data["bell"][i - 1]:
            a, bnode = link
            key = (channel_key(int(a), int(bnode)), int(vertex))
            b._flow[key] = int(f)
        m = ShotStrategy(StrategyKind.MEMORY, i)
        for node, vertex, f in data["memory"][i - 1]:
            m._flow[(int(node), int(vertex))] = int(f)
        bell.append(b)
        memory.append(m)
    paths = []
    for p in data.get("paths", []):
        paths.append(
            PlannedPath(
                shot=int(p["shot"]),
                purpose=PathPurpose(p["purpose"]),
                nodes=tuple(int(x) for x in p["nodes"]),
                owners=tuple(int(x) for x in p["owners"]),
                edge=channel_key(*p["edge"]) if p.get("edge") else None,
                deliver_vertex=p.get("deliver_vertex"),
                fusion_node=p.get("fusion_node"),
            )
        )
    return Solution(bell, memory, paths)
