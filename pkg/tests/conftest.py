import pytest

from gsdsim.model import Assignment, DistributionTask, GraphState, Network, channel_key


def make_network(channels, widths=None, probs=None, memory=None, cz_prob=1.0):
    """Small helper: channels as (a, b) pairs, scalar or per-channel widths/probs."""
    nodes = set()
    for a, b in channels:
        nodes.add(a)
        nodes.add(b)
    width_map = {}
    prob_map = {}
    for i, (a, b) in enumerate(channels):
        c = channel_key(a, b)
        if widths is None:
            width_map[c] = 1
        elif isinstance(widths, int):
            width_map[c] = widths
        else:
            width_map[c] = widths[i]
        if probs is None:
            prob_map[c] = 1.0
        elif isinstance(probs, float):
            prob_map[c] = probs
        else:
            prob_map[c] = probs[i]
    return Network(frozenset(nodes), width_map, prob_map, memory or {}, cz_prob=cz_prob)


def make_task(channels, edges, assignment, **net_kwargs):
    net = make_network(channels, **net_kwargs)
    vertices = set()
    for a, b in edges:
        vertices.add(a)
        vertices.add(b)
    vertices |= set(assignment)
    gs = GraphState(frozenset(vertices), frozenset(channel_key(a, b) for a, b in edges))
    return DistributionTask(net, gs, Assignment(assignment))


@pytest.fixture
def line3_task():
    """Bell pair across a 3-node line, all unit probabilities."""
    return make_task([(0, 1), (1, 2)], [(0, 1)], {0: 0, 1: 2})
