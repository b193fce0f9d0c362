"""Adaptive execution engine: plan, realize, recover, modify, repeat.

Each cycle takes only the next shot of the current plan, realizes every
channel's Bell attempts, lets nodes pick switches (and saves, when the
two-shot recovery is on), then feeds the outcome back into the task.  The
planner state stays alive while execution matches the plan and is rebuilt
from the modified task on any deviation, so a run over a deterministic
network reproduces the planner's ideal metrics exactly.

Memory accounting charges every executed shot exactly one boundary:
peer-to-peer boundaries mirror the planner's own settling (deferred by one
shot for the lookahead strategies), space-time boundaries come from the
plan's vertical flows, the centralized planner uses its closed-form holding
pattern, and any deviated or reset shot is charged from the actual holdings.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .mgst import MgstPlan, mgst_feasible, mgst_plan, shipped_vertices
from .model import (
    Assignment,
    Channel,
    DistributionTask,
    GraphState,
    GsdError,
    Metrics,
    NoSolutionError,
    PathPurpose,
    PlannedPath,
    Solution,
    channel_key,
)
from .p2pgsd import MemoryStrategyKind, P2PPlanner, SavedChannel, ShotResidual
from .recovery import (
    DEFAULT_H_MAX,
    DEFAULT_MEM_COST,
    LinkState,
    RecoveryPlan,
    eum_switch,
    find_recovery_paths,
    st_eum_decide,
)
from .stp2pgsd import StMetricVariant, StPlan, StP2PPlanner, _solution_from_st

DEFAULT_SHOT_CAP = 200


class PlannerKind(Enum):
    MGST = "mgst"
    P2PGSD = "p2pgsd"
    STP2PGSD = "stp2pgsd"


class RunStatus(Enum):
    IN_PROGRESS = "in_progress"
    SUCCESS = "success"
    DISCARDED = "discarded"


@dataclass
class ProtocolConfig:
    planner: PlannerKind = PlannerKind.P2PGSD
    mem_strategy: MemoryStrategyKind = MemoryStrategyKind.STANDARD
    st_variant: StMetricVariant = field(default_factory=StMetricVariant)
    recovery: bool = True          # EUM switch selection on planned paths
    st_eum: bool = False           # two-shot memory saving
    h_max: int = DEFAULT_H_MAX
    mem_cost: float = DEFAULT_MEM_COST
    shot_cap: int = DEFAULT_SHOT_CAP


@dataclass
class ShotRecord:
    shot: int
    planned: list[dict]
    realized_links: int
    completed: list
    failed: list
    saves: list[Channel]
    memory_held: int = 0
    reset: bool = False
    replanned: bool = False

    def to_jsonable(self) -> dict:
        return {
            "shot": self.shot,
            "planned": self.planned,
            "realized_links": self.realized_links,
            "completed": [list(c) if isinstance(c, tuple) else c for c in self.completed],
            "failed": [list(c) if isinstance(c, tuple) else c for c in self.failed],
            "saves": [list(c) for c in self.saves],
            "memory_held": self.memory_held,
            "reset": self.reset,
            "replanned": self.replanned,
        }


@dataclass
class ExecutionTrace:
    status: RunStatus
    shots: int
    bell_pairs: int
    cum_memory: int
    records: list[ShotRecord]
    planner_runtime_ms: float = 0.0

    @property
    def metrics(self) -> Metrics:
        return Metrics(self.shots, self.bell_pairs, self.cum_memory)

    def to_jsonable(self) -> dict:
        # wall-clock runtime is harness metadata, not execution state, and is
        # deliberately left out so equal seeds serialize identically
        return {
            "status": self.status.value,
            "shots": self.shots,
            "bell_pairs": self.bell_pairs,
            "cum_memory": self.cum_memory,
            "records": [r.to_jsonable() for r in self.records],
        }


@dataclass
class VirtualVertex:
    """A held, not-yet-anchored connection component of one vertex."""

    source: int
    component: frozenset[int]
    carried_edges: frozenset[Channel] = frozenset()
    forwarding: frozenset[int] = frozenset()


class _Run:
    def __init__(self, task: DistributionTask, config: ProtocolConfig, seed):
        self.original = task
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.net = task.network
        self.records: list[ShotRecord] = []
        self.bell = 0
        self.memory = 0
        self.runtime_ms = 0.0
        self._adjacency = self.net.adjacency()
        self._sorted_channels = self.net.channels
        self.reset_state()

    def reset_state(self):
        orig = self.original
        self.remaining_edges = {
            e for e in orig.graph_state.edges
            if not (orig.assignment.nodes(e[0]) & orig.assignment.nodes(e[1]))
        }
        self.holders: dict[int, list[int]] = {
            v: sorted(orig.assignment.nodes(v)) for v in sorted(orig.graph_state.vertices)
        }
        self.saved_pairs: list[Channel] = []
        self.components: dict[int, set[int]] = {}   # component id -> nodes
        self.comp_vertex: dict[int, int] = {}       # component id -> source vertex
        self.carried: list[tuple[Channel, int, int]] = []  # (edge, comp id or -1, comp id or -1)
        self._comp_counter = 0
        self.planner_state = None
        self.mgst_root: Optional[int] = None
        self.mgst_deliveries: dict[int, int] = {}

    # -- task views -------------------------------------------------------

    def current_task(self) -> DistributionTask:
        gs = GraphState(self.original.graph_state.vertices, frozenset(self.remaining_edges))
        assignment = Assignment({v: list(self.holders[v]) for v in sorted(self.holders)})
        return DistributionTask(self.net, gs, assignment)

    def mgst_remaining(self) -> list[int]:
        return [v for v in shipped_vertices(self.original) if v not in self.mgst_deliveries]

    def done(self) -> bool:
        if self.config.planner is PlannerKind.MGST:
            return not self.mgst_remaining()
        return not self.remaining_edges and not self.components and not self.carried

    def holders_memory(self) -> int:
        total = sum(len(h) for h in self.holders.values())
        total += sum(len(c) for c in self.components.values())
        total += 2 * len(self.saved_pairs)
        return total

    def mgst_memory_at(self, shot: int) -> int:
        root = self.mgst_root
        count = 0
        for v in shipped_vertices(self.original):
            target = self.original.assignment.node(v)
            if root is not None and target == root:
                count += 1
                continue
            delivered = self.mgst_deliveries.get(v)
            if delivered is None or delivered == shot:
                count += 1  # still (or protectively) held at the root
            if delivered is not None and delivered >= 1:
                count += 1  # held at its destination from the delivery shot on
        return count


def run_adaptive(task: DistributionTask, config: Optional[ProtocolConfig] = None,
                 seed=0) -> ExecutionTrace:
    """Execute the four-phase adaptive loop until success or the shot cap."""
    config = config or ProtocolConfig()
    run = _Run(task, config, seed)
    shot = 0
    while not run.done() and shot < config.shot_cap:
        shot += 1
        t0 = time.perf_counter()
        try:
            paths, replanned = _plan_next_shot(run, shot)
        except (NoSolutionError, GsdError):
            run.runtime_ms += (time.perf_counter() - t0) * 1000.0
            run.reset_state()
            rec = ShotRecord(shot, [], 0, [], [], [], reset=True, replanned=True)
            rec.memory_held = (run.mgst_memory_at(shot) if config.planner is PlannerKind.MGST
                               else run.holders_memory())
            run.memory += rec.memory_held
            run.records.append(rec)
            continue
        run.runtime_ms += (time.perf_counter() - t0) * 1000.0
        _execute_shot(run, shot, paths, replanned)
    if run.done() and run.config.planner is PlannerKind.P2PGSD and isinstance(run.planner_state, P2PPlanner):
        planner = run.planner_state
        if run.config.mem_strategy is not MemoryStrategyKind.MINIMUM and planner.shot >= 1:
            final = planner.settle_boundary(planner.shot)
            run.memory += len(final)
            if run.records:
                run.records[-1].memory_held += len(final)
    status = RunStatus.SUCCESS if run.done() else RunStatus.DISCARDED
    return ExecutionTrace(status=status, shots=shot, bell_pairs=run.bell,
                          cum_memory=run.memory, records=run.records,
                          planner_runtime_ms=run.runtime_ms)


# -- planning ----------------------------------------------------------------


def _plan_next_shot(run: _Run, shot: int):
    kind = run.config.planner
    if kind is PlannerKind.MGST:
        return _plan_mgst(run)
    if kind is PlannerKind.P2PGSD:
        return _plan_p2p(run)
    return _plan_stp2p(run)


def _plan_mgst(run: _Run):
    state = run.planner_state
    if state is not None and state["cursor"] < state["plan"].k:
        state["cursor"] += 1
        return _shot_paths(state["plan"].solution, state["cursor"]), False
    task = _mgst_task(run)
    ship = run.mgst_remaining()
    plan = (mgst_plan(task, ship) if run.mgst_root is None
            else _mgst_plan_pinned(task, run.mgst_root, ship))
    run.mgst_root = plan.root
    for v, j in plan.delivery_shot.items():
        if j == 0:
            run.mgst_deliveries.setdefault(v, 0)  # lives at the root already
    run.planner_state = {"plan": plan, "cursor": 1}
    return _shot_paths(plan.solution, 1), True


def _mgst_plan_pinned(task: DistributionTask, root: int,
                      ship: list[int] | None = None) -> MgstPlan:
    from .mgst import _decompose, _plan_from_paths

    ship = shipped_vertices(task) if ship is None else sorted(ship)
    if not ship:
        return MgstPlan(Solution([], [], []), root=root, k=0, delivery_shot={}, cost=0.0)
    lo, hi = 1, len(ship)
    if not mgst_feasible(task, root, hi, ship):
        raise NoSolutionError("pinned root infeasible")
    while lo < hi:
        mid = (lo + hi) // 2
        if mgst_feasible(task, root, mid, ship):
            hi = mid
        else:
            lo = mid + 1
    paths = _decompose(task, root, lo, ship)
    cost = sum(item[3] for item in paths)
    return _plan_from_paths(task, root, lo, paths, cost, ship)


def _mgst_task(run: _Run) -> DistributionTask:
    keep = set(run.mgst_remaining())
    gs = run.original.graph_state
    sub = GraphState(frozenset(keep), frozenset(e for e in gs.edges if e[0] in keep and e[1] in keep))
    assignment = Assignment({v: run.original.assignment.node(v) for v in sorted(keep)})
    return DistributionTask(run.net, sub, assignment)


def _shot_paths(solution: Solution, shot: int) -> list[PlannedPath]:
    return [p for p in solution.paths if p.shot == shot]


def _plan_p2p(run: _Run):
    replanned = False
    planner: Optional[P2PPlanner] = run.planner_state
    if not isinstance(planner, P2PPlanner):
        planner = P2PPlanner(run.current_task(), run.config.mem_strategy)
        run.planner_state = planner
        replanned = True
    saved = [SavedChannel(c) for c in run.saved_pairs]
    result = planner.plan_shot(saved=saved)
    # mirror the pure planner's boundary settling (and VRM pruning)
    run._boundary_precharged = False
    if run.config.mem_strategy is MemoryStrategyKind.MINIMUM:
        run.memory += len(planner.settle_boundary(planner.shot))
        run._boundary_precharged = True
    elif planner.shot >= 2:
        run.memory += len(planner.settle_boundary(planner.shot - 1))
    return list(result.paths), replanned


def _plan_stp2p(run: _Run):
    state = run.planner_state
    if isinstance(state, dict) and state.get("kind") == "st" and state["cursor"] < state["plan"].k:
        state["cursor"] += 1
        return _shot_paths(state["plan"].solution, state["cursor"]), False
    task, priority_edges, virtual_map = _stp2p_task(run)
    plan = _stp2p_plan_with_priority(task, run.config.st_variant, priority_edges)
    run.planner_state = {"kind": "st", "plan": plan, "cursor": 1, "virtual_map": virtual_map}
    return _shot_paths(plan.solution, 1), True


def _stp2p_plan_with_priority(task, variant, priority_edges) -> StPlan:
    from .p2pgsd import p2pgsd_plan

    routable = [e for e in sorted(task.graph_state.edges)
                if not (task.assignment.nodes(e[0]) & task.assignment.nodes(e[1]))]
    if not routable:
        return StPlan(Solution([], [], []), 0, [])
    baseline = p2pgsd_plan(task, MemoryStrategyKind.STANDARD)
    hi = max(baseline.n_shots, 1)
    results = {}

    def feasible(k):
        res = StP2PPlanner(task, k, variant, priority_edges=priority_edges).plan()
        if res is not None:
            results[k] = res
        return res is not None

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
    res = results[lo]
    return StPlan(_solution_from_st(task, lo, res.st_paths), lo, res.st_paths)


def _stp2p_task(run: _Run):
    """Fold held components into virtual vertices joined by virtual edges.

    Virtual edges are routed first, more-carried and larger components ahead;
    a component's nodes become the virtual vertex's assigned set, so the
    planner reserves their memory columns like any anchor."""
    gs = run.original.graph_state
    vert_ids = sorted(gs.vertices)
    next_id = (max(vert_ids) + 1) if vert_ids else 0
    vertices = set(vert_ids)
    edges = set(run.remaining_edges)
    mapping: dict[int, list[int]] = {v: list(run.holders[v]) for v in vert_ids}
    virtual_map: dict[int, int] = {}  # virtual vertex id -> component id
    records: dict[int, VirtualVertex] = {}
    order = []
    for comp_id in sorted(run.components):
        comp = run.components[comp_id]
        source = run.comp_vertex[comp_id]
        vid = next_id
        next_id += 1
        vertices.add(vid)
        mapping[vid] = sorted(comp)
        edge = channel_key(source, vid)
        edges.add(edge)
        virtual_map[vid] = comp_id
        carried_edges = frozenset(e for (e, c1, c2) in run.carried if comp_id in (c1, c2))
        records[vid] = VirtualVertex(source=source, component=frozenset(comp),
                                     carried_edges=carried_edges,
                                     forwarding=frozenset(comp))
        order.append((-len(carried_edges), -len(comp), vid, edge))
    priority = [edge for *_k, edge in sorted(order)]
    run.virtual_records = records
    task = DistributionTask(run.net, GraphState(frozenset(vertices), frozenset(edges)),
                            Assignment(mapping))
    return task, priority, virtual_map


# -- realization -------------------------------------------------------------


def _execute_shot(run: _Run, shot: int, paths: list[PlannedPath], replanned: bool) -> None:
    cfg = run.config
    successes: dict[Channel, int] = {}
    for c in run._sorted_channels:
        w = run.net.channel_width[c]
        p = run.net.channel_prob[c]
        successes[c] = int((run.rng.random(w) < p).sum()) if p < 1.0 else w

    detour_plans: dict[int, RecoveryPlan] = {}
    if cfg.recovery:
        residual = _residual_after(run, paths)
        for i, path in enumerate(paths):
            if len(path.nodes) >= 2:
                detour_plans[i] = find_recovery_paths(path.nodes, residual, cfg.h_max)

    saved_available = set(run.saved_pairs)
    granted: dict[Channel, int] = {}
    consumed_saved: set[Channel] = set()

    def claim(c: Channel) -> tuple[bool, bool]:
        if c in saved_available:
            saved_available.discard(c)
            consumed_saved.add(c)
            return True, True
        got = granted.get(c, 0)
        granted[c] = got + 1
        return got < successes.get(c, 0), False

    outcomes_per_path: list[dict[Channel, int]] = []
    from_saved_per_path: list[set[Channel]] = []
    realized_total = 0
    for i, path in enumerate(paths):
        outcomes: dict[Channel, int] = {}
        from_saved: set[Channel] = set()
        for c in path.channels:
            ok, was_saved = claim(c)
            outcomes[c] = 1 if ok else 0
            if ok and not was_saved:
                realized_total += 1
            if was_saved:
                from_saved.add(c)
        plan_rec = detour_plans.get(i)
        if plan_rec:
            for det in plan_rec.detours.values():
                for a, b in zip(det, det[1:]):
                    c = channel_key(a, b)
                    if c not in outcomes:
                        ok, was_saved = claim(c)
                        outcomes[c] = 1 if ok else 0
                        if ok and not was_saved:
                            realized_total += 1
                        if was_saved:
                            from_saved.add(c)
        outcomes_per_path.append(outcomes)
        from_saved_per_path.append(from_saved)

    completed: list = []
    failed: list = []
    new_saves: list[Channel] = []
    reset = False
    deviation = False

    for i, path in enumerate(paths):
        outcomes = outcomes_per_path[i]
        plan_rec = detour_plans.get(i, RecoveryPlan(main=path.nodes))
        ok, walk, switches = _resolve_path(run, path, plan_rec, outcomes, cfg)
        run.bell += _count_bell(path, outcomes, from_saved_per_path[i], ok, walk)
        if ok and switches and run.net.cz_prob < 1.0:
            if not (run.rng.random(switches) < run.net.cz_prob).all():
                reset = True
                ok = False
        if ok:
            completed.append(path.edge if path.purpose is PathPurpose.EDGE else path.deliver_vertex)
            _apply_completion(run, shot, path, walk)
        else:
            failed.append(path.edge if path.purpose is PathPurpose.EDGE else path.deliver_vertex)
            deviation = True
            if not reset:
                _apply_failure(run, shot, path, plan_rec, outcomes, new_saves)

    run.saved_pairs = [c for c in run.saved_pairs if c not in consumed_saved]
    if cfg.st_eum and not reset:
        for c in new_saves:
            if c not in run.saved_pairs:
                run.saved_pairs.append(c)
    else:
        new_saves = []
    if run.saved_pairs:
        deviation = True

    rec = ShotRecord(shot, [p.to_jsonable() for p in paths], realized_total,
                     completed, failed, list(new_saves), reset=reset, replanned=replanned)

    if reset:
        precharged = getattr(run, "_boundary_precharged", False)
        run.reset_state()
        if cfg.planner is PlannerKind.MGST:
            rec.memory_held = run.mgst_memory_at(shot)
        elif not precharged:
            rec.memory_held = run.holders_memory()
        run.memory += rec.memory_held
        run.records.append(rec)
        return

    if cfg.planner is PlannerKind.STP2PGSD:
        _gc_components(run)
    rec.memory_held = _account_memory(run, shot, deviation)
    run.memory += rec.memory_held
    run.records.append(rec)

    if deviation:
        run.planner_state = None
        if cfg.planner is PlannerKind.P2PGSD and cfg.mem_strategy is MemoryStrategyKind.MINIMUM:
            run.holders = {v: sorted(run.original.assignment.nodes(v))
                           for v in run.original.graph_state.vertices}


def _account_memory(run: _Run, shot: int, deviation: bool) -> int:
    """One boundary's worth of held qubits for this shot (0 when deferred)."""
    cfg = run.config
    if cfg.planner is PlannerKind.MGST:
        return run.mgst_memory_at(shot)
    if cfg.planner is PlannerKind.STP2PGSD:
        if deviation or not isinstance(run.planner_state, dict):
            return run.holders_memory()
        state = run.planner_state
        boundary = state["cursor"]
        strategies = state["plan"].solution.memory
        if 1 <= boundary <= len(strategies):
            return strategies[boundary - 1].total_abs_flow()
        return run.holders_memory()
    # peer-to-peer: live-planner boundaries are settled at planning time
    if cfg.mem_strategy is MemoryStrategyKind.MINIMUM:
        return 0  # charged when the shot was planned
    if deviation:
        return run.holders_memory()
    return 0


def _residual_after(run: _Run, paths: list[PlannedPath]) -> ShotResidual:
    residual = ShotResidual(run.current_task() if run.config.planner is not PlannerKind.MGST
                            else _mgst_task_safe(run),
                            saved=[SavedChannel(c) for c in run.saved_pairs])
    for path in paths:
        for a, b in zip(path.nodes, path.nodes[1:]):
            try:
                residual.consume(a, b)
            except Exception:
                pass
    return residual


def _mgst_task_safe(run: _Run) -> DistributionTask:
    try:
        return _mgst_task(run)
    except Exception:
        return run.original


def _link_state_for(run: _Run, node: int, outcomes: dict[Channel, int], h_max: int) -> LinkState:
    radius = 2 * h_max
    seen = {node}
    frontier = [node]
    for _ in range(radius):
        nxt = []
        for u in frontier:
            for v in run._adjacency.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    known = {c: s for c, s in outcomes.items() if c[0] in seen and c[1] in seen}
    return LinkState(known=known)


def _resolve_path(run: _Run, path: PlannedPath, plan_rec: RecoveryPlan,
                  outcomes: dict[Channel, int], cfg: ProtocolConfig):
    """Walk the fusion chain defined by per-node switch choices.

    Returns (completed, walk nodes, internal switch count)."""
    nodes = path.nodes
    if len(nodes) <= 1:
        return True, list(nodes), 0
    if not cfg.recovery:
        ok = all(outcomes.get(channel_key(a, b), 0) > 0 for a, b in zip(nodes, nodes[1:]))
        return ok, list(nodes), (len(nodes) - 2 if ok else 0)

    e0, e1 = nodes[0], nodes[-1]
    priors = run.net.channel_prob
    switch_of: dict[int, Optional[tuple[int, int]]] = {}
    involved = set(nodes)
    for det in plan_rec.detours.values():
        involved |= set(det)
    for n in sorted(involved):
        if n in nodes:
            state = _link_state_for(run, n, outcomes, cfg.h_max)
            try:
                switch_of[n] = eum_switch(tuple(nodes), plan_rec, state, n, priors)
            except GsdError:
                switch_of[n] = None
        else:
            for det in plan_rec.detours.values():
                if n in det[1:-1]:
                    j = det.index(n)
                    switch_of[n] = (det[j - 1], det[j + 1])
                    break

    pair = switch_of.get(e0)
    if pair is None:
        return False, [e0], 0
    nxt = pair[1] if pair[0] == e0 else pair[0]
    walk = [e0]
    switches = 0
    current = e0
    guard = 0
    while guard < 4 * (len(nodes) + 8):
        guard += 1
        c = channel_key(current, nxt)
        if outcomes.get(c, 0) <= 0:
            return False, walk, switches
        walk.append(nxt)
        if nxt == e1:
            return True, walk, switches
        pair = switch_of.get(nxt)
        if pair is None or current not in pair:
            return False, walk, switches
        other = pair[0] if pair[1] == current else pair[1]
        switches += 1
        current, nxt = nxt, other
    return False, walk, switches


def _count_bell(path: PlannedPath, outcomes: dict[Channel, int],
                from_saved: set[Channel], ok: bool, walk) -> int:
    """Fresh pairs consumed: walked links plus burned main-path extras on
    success, every fresh realized claim on failure.  Saved pairs were already
    charged in the shot that produced them."""
    if ok:
        count = 0
        used = set()
        for a, b in zip(walk, walk[1:]):
            c = channel_key(a, b)
            used.add(c)
            if c not in from_saved:
                count += 1
        for a, b in zip(path.nodes, path.nodes[1:]):
            c = channel_key(a, b)
            if c not in used and outcomes.get(c, 0) > 0 and c not in from_saved:
                count += 1
        return count
    return sum(1 for c, v in outcomes.items() if v > 0 and c not in from_saved)


def _apply_completion(run: _Run, shot: int, path: PlannedPath, walk) -> None:
    if run.config.planner is PlannerKind.MGST:
        run.mgst_deliveries[path.deliver_vertex] = shot
        return
    if path.purpose is not PathPurpose.EDGE:
        return
    edge = path.edge
    state = run.planner_state
    virtual_map = state.get("virtual_map", {}) if isinstance(state, dict) else {}
    v1, v2 = edge
    if v1 in virtual_map or v2 in virtual_map:
        virt = v1 if v1 in virtual_map else v2
        comp_id = virtual_map[virt]
        real = run.comp_vertex[comp_id]
        run.holders[real] = sorted(set(run.holders[real]) | run.components.pop(comp_id))
        del run.comp_vertex[comp_id]
        _settle_carried(run)
        return
    run.remaining_edges.discard(edge)
    if run.config.planner is PlannerKind.P2PGSD and run.config.mem_strategy is not MemoryStrategyKind.MINIMUM:
        _extend_holders(run, path, walk)


def _settle_carried(run: _Run) -> None:
    run.carried = [
        (edge, c1, c2) for (edge, c1, c2) in run.carried
        if (c1 in run.components) or (c2 in run.components)
    ]


def _extend_holders(run: _Run, path: PlannedPath, walk) -> None:
    if path.fusion_node is None or len(path.nodes) < 2:
        return
    idx = path.nodes.index(path.fusion_node)
    v1, v2 = path.edge
    on_walk = set(walk)
    for v, side in ((v1, set(path.nodes[: idx + 1])), (v2, set(path.nodes[idx:]))):
        keep = sorted((side & on_walk) - set(run.holders[v]))
        if keep:
            run.holders[v] = _cap_holders(run, v, run.holders[v] + keep)


def _cap_holders(run: _Run, vertex: int, holders: list[int]) -> list[int]:
    from .model import UNLIMITED

    load: dict[int, int] = {}
    for v in sorted(run.holders):
        if v == vertex:
            continue
        for n in run.holders[v]:
            load[n] = load.get(n, 0) + 1
    out = []
    for n in holders:
        cap = run.net.memory_of(n)
        if cap is UNLIMITED or load.get(n, 0) < cap:
            out.append(n)
            load[n] = load.get(n, 0) + 1
    return out


def _apply_failure(run: _Run, shot: int, path: PlannedPath, plan_rec: RecoveryPlan,
                   outcomes: dict[Channel, int], new_saves: list[Channel]) -> None:
    cfg = run.config
    if cfg.planner is PlannerKind.MGST:
        return  # the root keeps holding the undelivered vertex
    if cfg.st_eum and len(path.nodes) >= 2:
        priors = run.net.channel_prob
        decisions = {}
        for n in path.nodes:
            state = _link_state_for(run, n, outcomes, cfg.h_max)
            decisions[n] = st_eum_decide(path.nodes, plan_rec, state, n, priors, run.net,
                                         mem_cost=cfg.mem_cost,
                                         saved_channels=set(run.saved_pairs))
        for a, b in zip(path.nodes, path.nodes[1:]):
            c = channel_key(a, b)
            if outcomes.get(c, 0) > 0 and decisions[a].save and decisions[b].save:
                if c not in run.saved_pairs and c not in new_saves:
                    new_saves.append(c)
    if cfg.planner is PlannerKind.STP2PGSD and path.purpose is PathPurpose.EDGE:
        _record_components(run, path, outcomes)


def _record_components(run: _Run, path: PlannedPath, outcomes: dict[Channel, int]) -> None:
    """Realized fused segments of a failed edge stay held as progress.

    A segment touching a node that already holds its vertex's connection is
    absorbed into the holder set; a disconnected one becomes a component
    represented by a virtual vertex at the next replan."""
    if len(path.nodes) < 2:
        return
    state = run.planner_state
    virtual_map = state.get("virtual_map", {}) if isinstance(state, dict) else {}
    v1, v2 = path.edge
    segments: list[tuple[int, list[int]]] = []
    if path.fusion_node is not None and path.fusion_node in path.nodes:
        idx = path.nodes.index(path.fusion_node)
        segments.append((v1, list(path.nodes[: idx + 1])))
        segments.append((v2, list(path.nodes[idx:])[::-1]))
    elif path.owners:
        owner = path.owners[0]
        if owner == v1:
            segments.append((v1, list(path.nodes)))
        elif owner == v2:
            segments.append((v2, list(path.nodes[::-1])))
    for vertex, ordered in segments:
        if vertex in virtual_map:
            continue
        seg = [ordered[0]]
        for a, b in zip(ordered, ordered[1:]):
            if outcomes.get(channel_key(a, b), 0) <= 0:
                break
            seg.append(b)
        if len(seg) < 2 or vertex not in run.holders:
            continue
        held = set(run.holders[vertex])
        if set(seg) & held:
            if set(seg) - held:
                run.holders[vertex] = sorted(held | set(seg))
            continue
        # a segment touching an existing component of the same vertex merges
        merged = None
        for comp_id in sorted(run.components):
            if run.comp_vertex[comp_id] == vertex and run.components[comp_id] & set(seg):
                run.components[comp_id] |= set(seg)
                merged = comp_id
                break
        if merged is not None:
            for other in sorted(run.components):
                if other != merged and run.comp_vertex.get(other) == vertex \
                        and run.components[other] & run.components[merged]:
                    run.components[merged] |= run.components.pop(other)
                    del run.comp_vertex[other]
            continue
        comp_id = run._comp_counter
        run._comp_counter += 1
        run.components[comp_id] = set(seg)
        run.comp_vertex[comp_id] = vertex


def _gc_components(run: _Run) -> None:
    """Drop held components whose source vertex has nothing left to do;
    their qubits are simply measured out and the memory freed."""
    if not run.components:
        return
    active = {v for e in run.remaining_edges for v in e}
    referenced = {c for (_e, c1, c2) in run.carried for c in (c1, c2)}
    for comp_id in sorted(run.components):
        v = run.comp_vertex[comp_id]
        if v not in active and comp_id not in referenced:
            del run.components[comp_id]
            del run.comp_vertex[comp_id]


# ---------------------------------------------------------------------------


def run_multitask(tasks: list[DistributionTask], config: Optional[ProtocolConfig] = None,
                  seed=0) -> list[ExecutionTrace]:
    """Run prioritized tasks over one network; earlier tasks claim first.

    Each shot, every unfinished task replans against the channel occupancy
    left by the higher-priority plans of the same shot, and all paths realize
    against one set of channel draws allocated in priority order.
    """
    config = config or ProtocolConfig()
    if config.planner is not PlannerKind.P2PGSD:
        raise GsdError("multitask execution supports the peer-to-peer planner")
    net = tasks[0].network
    for t in tasks:
        if t.network is not net and t.network.channel_width != net.channel_width:
            raise GsdError("all tasks must share one network")
    rng = np.random.default_rng(seed)
    runs = [_Run(t, config, seed) for t in tasks]
    for r in runs:
        r.rng = rng
    shot = 0
    finished_at: dict[int, int] = {}
    while shot < config.shot_cap and any(not r.done() for r in runs):
        shot += 1
        occupancy: dict[Channel, int] = {}
        planned: list[tuple[int, list[PlannedPath]]] = []
        for i, r in enumerate(runs):
            if r.done():
                continue
            planner: Optional[P2PPlanner] = r.planner_state
            if not isinstance(planner, P2PPlanner):
                planner = P2PPlanner(r.current_task(), config.mem_strategy)
                r.planner_state = planner
            result = planner.plan_shot(initial_occupancy=occupancy)
            if config.mem_strategy is MemoryStrategyKind.MINIMUM:
                r.memory += len(planner.settle_boundary(planner.shot))
            elif planner.shot >= 2:
                r.memory += len(planner.settle_boundary(planner.shot - 1))
            if result.residual is not None:
                occupancy = dict(result.residual.occupancy)
            planned.append((i, list(result.paths)))
        successes: dict[Channel, int] = {}
        for c in sorted(net.channel_width):
            w = net.channel_width[c]
            p = net.channel_prob[c]
            successes[c] = int((rng.random(w) < p).sum()) if p < 1.0 else w
        granted: dict[Channel, int] = {}
        for i, paths in planned:
            _execute_multitask_shot(runs[i], shot, paths, successes, granted)
            if runs[i].done() and i not in finished_at:
                finished_at[i] = shot
    traces = []
    for i, r in enumerate(runs):
        if r.done() and isinstance(r.planner_state, P2PPlanner) \
                and config.mem_strategy is not MemoryStrategyKind.MINIMUM and r.planner_state.shot >= 1:
            r.memory += len(r.planner_state.settle_boundary(r.planner_state.shot))
        status = RunStatus.SUCCESS if r.done() else RunStatus.DISCARDED
        traces.append(ExecutionTrace(status=status, shots=finished_at.get(i, shot),
                                     bell_pairs=r.bell, cum_memory=r.memory,
                                     records=r.records, planner_runtime_ms=r.runtime_ms))
    return traces


def _execute_multitask_shot(run: _Run, shot: int, paths: list[PlannedPath],
                            successes: dict[Channel, int], granted: dict[Channel, int]) -> None:
    completed: list = []
    failed: list = []
    realized_total = 0
    deviation = False
    for path in paths:
        outcomes: dict[Channel, int] = {}
        for c in path.channels:
            got = granted.get(c, 0)
            granted[c] = got + 1
            ok = got < successes.get(c, 0)
            outcomes[c] = 1 if ok else 0
            realized_total += 1 if ok else 0
        ok_all = all(outcomes.get(c, 0) > 0 for c in path.channels)
        run.bell += sum(outcomes.values())
        if ok_all:
            completed.append(path.edge)
            _apply_completion(run, shot, path, list(path.nodes))
        else:
            failed.append(path.edge)
            deviation = True
    rec = ShotRecord(shot, [p.to_jsonable() for p in paths], realized_total,
                     completed, failed, [])
    rec.memory_held = 0 if not deviation else (
        0 if run.config.mem_strategy is MemoryStrategyKind.MINIMUM else run.holders_memory())
    run.memory += rec.memory_held
    run.records.append(rec)
    if deviation:
        run.planner_state = None
        if run.config.mem_strategy is MemoryStrategyKind.MINIMUM:
            run.holders = {v: sorted(run.original.assignment.nodes(v))
                           for v in run.original.graph_state.vertices}
