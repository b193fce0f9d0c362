import math

import pytest

from gsdsim.graphs import GraphStateSpec, TopologyParams, gen_assignment, gen_cell_topology, gen_graph_state, gen_waxman_network
from gsdsim.model import Assignment, DistributionTask, GraphState, compute_metrics
from gsdsim.p2pgsd import MemoryStrategyKind, p2pgsd_plan
from gsdsim.stp2pgsd import StMetric, StMetricVariant, st_effective_prob, stp2pgsd_plan
from gsdsim.validate import is_valid_solution

from conftest import make_task


def example2_task():
    """Two 2-node cells, width-3 bottleneck, six crossing Bell pairs.

    Four pairs sit on the bottleneck endpoints and two span the whole chain;
    the greedy flat planner starves the long pairs while the two-layer search
    packs everything into two shots.
    """
    net = gen_cell_topology(2, 3, 0.9, cell_size=2)
    pairs = [(2 * i, 2 * i + 1) for i in range(6)]
    gs = GraphState(frozenset(range(12)), frozenset(pairs))
    amap = {0: 1, 1: 2, 2: 2, 3: 1, 4: 1, 5: 2, 6: 2, 7: 1, 8: 3, 9: 0, 10: 3, 11: 0}
    return DistributionTask(net, gs, Assignment(amap))


class TestEffectiveProb:
    def test_first_shot_plain(self):
        for kind in StMetric:
            v = StMetricVariant(kind, m_f=0.7)
            assert st_effective_prob(0.5, 2, 0, 0, v) == pytest.approx(0.75)

    def test_factor_exponent(self):
        v = StMetricVariant(StMetric.FACTOR, m_f=1.0)
        # conditional prob 0.5 at one layer ahead: (0.5)^(1+1)
        assert st_effective_prob(0.5, 1, 0, 1, v) == pytest.approx(0.25)

    def test_standard_variant(self):
        v = StMetricVariant(StMetric.STANDARD)
        # p^(j*w) * P(e|o): 0.5^2 * 0.75
        assert st_effective_prob(0.5, 2, 0, 1, v) == pytest.approx(0.25 * 0.75)

    def test_hand_evaluated_grid(self):
        v_std = StMetricVariant(StMetric.STANDARD)
        v_fac = StMetricVariant(StMetric.FACTOR, m_f=0.5)
        for p in (0.4, 0.7, 0.95):
            for w in (1, 2, 3):
                for o in range(w):
                    for j in (0, 1, 2):
                        base = sum(math.comb(w, i) * p**i * (1 - p) ** (w - i) for i in range(o + 1, w + 1))
                        assert st_effective_prob(p, w, o, j, v_std) == pytest.approx(p ** (j * w) * base, abs=1e-12)
                        assert st_effective_prob(p, w, o, j, v_fac) == pytest.approx(base ** (1 + 0.5 * j), abs=1e-12)


class TestStPlanner:
    def test_bell_pair_one_layer(self):
        task = make_task([(0, 1)], [(0, 1)], {0: 0, 1: 1})
        plan = stp2pgsd_plan(task)
        assert plan.k == 1
        assert is_valid_solution(plan.solution, task).ok

    def test_star_one_shot_minimal_memory(self):
        channels = [(i, i + 1) for i in range(5)]
        edges = [(0, i) for i in range(1, 6)]
        task = make_task(channels, edges, {i: i for i in range(6)})
        plan = stp2pgsd_plan(task)
        assert plan.k == 1
        m = compute_metrics(plan.solution, task.network)
        # only the final persistence of the six anchored qubits
        assert m.cum_memory == 6
        assert is_valid_solution(plan.solution, task).ok

    def test_example2_gap(self):
        task = example2_task()
        flat = p2pgsd_plan(task)
        st = stp2pgsd_plan(task, StMetricVariant(StMetric.STANDARD))
        assert st.k == 2
        assert flat.n_shots >= 3
        assert is_valid_solution(st.solution, task).ok
        assert is_valid_solution(flat, task).ok

    def test_feasibility_monotone_in_k(self):
        from gsdsim.stp2pgsd import StP2PPlanner

        task = example2_task()
        feasible = [StP2PPlanner(task, k, StMetricVariant()).plan() is not None for k in range(1, 6)]
        for a, b in zip(feasible, feasible[1:]):
            assert (not a) or b

    def test_never_worse_than_flat_at_unit_probs(self):
        variant = StMetricVariant(StMetric.STANDARD, memory_cost=0.0)
        for seed in range(8):
            net = gen_waxman_network(TopologyParams(11, waxman_beta=0.9, waxman_decay=2.5, seed=seed))
            net.channel_prob = {c: 1.0 for c in net.channel_prob}
            gs = gen_graph_state(GraphStateSpec("prufer_tree", 5, seed=seed))
            task = DistributionTask(net, gs, gen_assignment(gs, net, seed=seed + 100))
            flat = p2pgsd_plan(task)
            st = stp2pgsd_plan(task, variant)
            assert st.k <= flat.n_shots

    @pytest.mark.parametrize("kind", list(StMetric))
    def test_random_instances_valid(self, kind):
        variant = StMetricVariant(kind)
        for seed in range(8):
            net = gen_waxman_network(TopologyParams(12, waxman_beta=0.9, waxman_decay=2.5, seed=seed))
            gs = gen_graph_state(GraphStateSpec("prufer_tree", 6, seed=seed))
            task = DistributionTask(net, gs, gen_assignment(gs, net, seed=seed + 50))
            plan = stp2pgsd_plan(task, variant)
            assert is_valid_solution(plan.solution, task).ok
