"""Random and deterministic generators for networks, graph states and tasks."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    UNLIMITED,
    Assignment,
    DistributionTask,
    GraphState,
    GsdError,
    Network,
    channel_key,
)

_MAX_CONNECT_RETRIES = 100


@dataclass
class TopologyParams:
    n_nodes: int
    waxman_beta: float = 0.6
    waxman_decay: float = 5.0
    attenuation: float = 0.5
    avg_channel_width: int = 2
    avg_memory: Optional[int] = None  # None means unlimited
    cz_prob: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise GsdError("need at least 2 nodes")
        if not (0.0 < self.waxman_beta <= 1.0):
            raise GsdError("waxman_beta must be in (0,1]")
        if self.waxman_decay <= 0:
            raise GsdError("waxman_decay must be positive")
        if self.avg_channel_width < 1:
            raise GsdError("avg_channel_width must be >= 1")


@dataclass
class GraphStateSpec:
    kind: str  # erdos_renyi | star | prufer_tree | grid | bell_pairs | complete
    n_vertices: int
    er_prob: float = 0.1
    grid_rows: int = 0
    grid_cols: int = 0
    seed: int = 0

    KINDS = ("erdos_renyi", "star", "prufer_tree", "grid", "bell_pairs", "complete")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise GsdError(f"unknown graph-state kind {self.kind!r}")
        if self.n_vertices < 1:
            raise GsdError("n_vertices must be >= 1")
        if self.kind == "grid":
            if self.grid_rows * self.grid_cols != self.n_vertices:
                raise GsdError("grid rows*cols must equal n_vertices")
        if self.kind == "bell_pairs" and self.n_vertices % 2 != 0:
            raise GsdError("bell_pairs needs an even vertex count")


def _poisson_width(rng: np.random.Generator, avg: int) -> int:
    # 1 + Poisson(avg-1): guarantees a minimum of one slot
    return 1 + int(rng.poisson(avg - 1))


def gen_waxman_network(params: TopologyParams) -> Network:
    """Waxman topology in the unit square with distance-decayed channel
    probabilities and Poisson-shifted widths; resampled until connected."""
    rng = np.random.default_rng(params.seed)
    n = params.n_nodes
    for _attempt in range(_MAX_CONNECT_RETRIES):
        pos = rng.random((n, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        dmax = dist.max()
        if dmax <= 0:
            continue
        dnorm = dist / dmax
        width: dict = {}
        prob: dict = {}
        for a in range(n):
            for b in range(a + 1, n):
                p_create = params.waxman_beta * math.exp(-params.waxman_decay * dnorm[a, b])
                if rng.random() < p_create:
                    c = (a, b)
                    width[c] = _poisson_width(rng, params.avg_channel_width)
                    prob[c] = math.exp(-params.attenuation * dnorm[a, b])
        memory: dict = {}
        if params.avg_memory is not None:
            for node in range(n):
                memory[node] = _poisson_width(rng, params.avg_memory)
        net = Network(frozenset(range(n)), width, prob, memory, cz_prob=params.cz_prob)
        if net.is_connected() and width:
            return net
    raise GsdError(f"could not generate a connected network in {_MAX_CONNECT_RETRIES} attempts")


def waxman_channel_creation_prob(beta: float, decay: float, d_norm: float) -> float:
    """Channel-creation probability at a given normalized distance."""
    return beta * math.exp(-decay * d_norm)


def gen_cell_topology(
    n_cells: int,
    cell_width: int,
    channel_prob: float,
    cell_size: int = 4,
) -> Network:
    """Chain of fully-intra-connected cells joined by single bottleneck channels.

    Cell i occupies nodes [i*cell_size, (i+1)*cell_size); intra-cell channels
    have width 1 and the single channel joining consecutive cells has width
    `cell_width`.  All channels share `channel_prob`.
    """
    if n_cells < 1:
        raise GsdError("n_cells must be >= 1")
    if cell_width < 1:
        raise GsdError("cell_width must be >= 1")
    if cell_size < 1:
        raise GsdError("cell_size must be >= 1")
    if not (0.0 < channel_prob <= 1.0):
        raise GsdError("channel_prob must be in (0,1]")
    width: dict = {}
    prob: dict = {}
    n = n_cells * cell_size
    for cell in range(n_cells):
        base = cell * cell_size
        members = range(base, base + cell_size)
        for a in members:
            for b in members:
                if a < b:
                    width[(a, b)] = 1
                    prob[(a, b)] = channel_prob
        if cell > 0:
            # bottleneck joins the last node of the previous cell to this cell's first
            c = channel_key(base - 1, base)
            width[c] = cell_width
            prob[c] = channel_prob
    if n == 1:
        raise GsdError("degenerate single-node topology")
    return Network(frozenset(range(n)), width, prob, {}, cz_prob=1.0)


def gen_graph_state(spec: GraphStateSpec) -> GraphState:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_vertices
    verts = frozenset(range(n))
    edges: set = set()
    if spec.kind == "star":
        edges = {(0, i) for i in range(1, n)}
    elif spec.kind == "complete":
        edges = {(a, b) for a in range(n) for b in range(a + 1, n)}
    elif spec.kind == "bell_pairs":
        edges = {(2 * i, 2 * i + 1) for i in range(n // 2)}
    elif spec.kind == "grid":
        rows, cols = spec.grid_rows, spec.grid_cols
        for r in range(rows):
            for c in range(cols):
                v = r * cols + c
                if c + 1 < cols:
                    edges.add(channel_key(v, v + 1))
                if r + 1 < rows:
                    edges.add(channel_key(v, v + cols))
    elif spec.kind == "erdos_renyi":
        for a in range(n):
            for b in range(a + 1, n):
                if rng.random() < spec.er_prob:
                    edges.add((a, b))
    elif spec.kind == "prufer_tree":
        edges = set(prufer_tree_edges(n, rng))
    return GraphState(verts, frozenset(edges))


def prufer_tree_edges(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Decode a uniformly random Prufer sequence into a labeled tree."""
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    seq = [int(rng.integers(0, n)) for _ in range(n - 2)]
    degree = [1] * n
    for x in seq:
        degree[x] += 1
    edges = []
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append(channel_key(leaf, x))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, x)
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append(channel_key(u, v))
    return edges


def gen_assignment(gs: GraphState, net: Network, seed: int = 0, injective: bool = True) -> Assignment:
    rng = np.random.default_rng(seed)
    verts = sorted(gs.vertices)
    nodes = sorted(net.nodes)
    if injective:
        if len(verts) > len(nodes):
            raise GsdError(f"cannot injectively assign {len(verts)} vertices to {len(nodes)} nodes")
        chosen = rng.choice(len(nodes), size=len(verts), replace=False)
        return Assignment({v: nodes[int(i)] for v, i in zip(verts, chosen)})
    chosen = rng.integers(0, len(nodes), size=len(verts))
    return Assignment({v: nodes[int(i)] for v, i in zip(verts, chosen)})


def gen_limited_memory(task: DistributionTask, avg: int = 1, mgst_root_bonus: bool = False, seed: int = 0) -> Network:
    """Replace the network's memory budgets with tight per-node limits.

    Every node gets max(assigned vertex count, 1 + Poisson(avg-1)); with
    `mgst_root_bonus` one uniformly chosen node additionally receives
    2*|V_S| so a centralized planner stays executable.
    """
    if avg < 1:
        raise GsdError("avg memory must be >= 1")
    rng = np.random.default_rng(seed)
    assigned_count: dict[int, int] = {}
    for v in sorted(task.graph_state.vertices):
        for n in task.assignment.nodes(v):
            assigned_count[n] = assigned_count.get(n, 0) + 1
    memory: dict = {}
    nodes = sorted(task.network.nodes)
    for n in nodes:
        memory[n] = max(assigned_count.get(n, 0), _poisson_width(rng, avg))
    if mgst_root_bonus:
        bonus_node = nodes[int(rng.integers(0, len(nodes)))]
        memory[bonus_node] = max(memory[bonus_node], 2 * len(task.graph_state.vertices))
    net = task.network.copy()
    net.node_memory = memory
    return net
