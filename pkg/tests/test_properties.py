"""Invariants checked over randomly drawn states, graphs and schedules."""
from __future__ import annotations

import random

from hypothesis import given, settings, strategies as st

from ssle import oracle
from ssle import trace as tr
from ssle.graph import GRAPH_KINDS, ScheduleParams, augment_shadows, generate
from ssle.node import Message, NodeState, check_local_consistency, clamp_schedule, pi_successor
from ssle.sim import STRATEGIES, N_PRESETS, _random_state, _tree_states, _bfs_parents, adversary_init

seeds = st.integers(0, 10**6)


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(GRAPH_KINDS), n=st.integers(1, 10), seed=seeds)
def test_random_states_are_locally_consistent(kind, n, seed):
    topo = generate(kind, n, seed)
    aug = augment_shadows(topo)
    params = ScheduleParams(topo.N)
    rng = random.Random(seed)
    for v in range(aug.n_aug):
        s = _random_state(v, aug, params, rng)
        assert check_local_consistency(s, v, aug, params)
        clamp_schedule(s, params)
        assert check_local_consistency(s, v, aug, params)


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(GRAPH_KINDS), n=st.integers(1, 10), seed=seeds)
def test_tree_states_form_one_compatible_spanning_tree(kind, n, seed):
    topo = generate(kind, n, seed)
    aug = augment_shadows(topo)
    params = ScheduleParams(topo.N)
    states = _tree_states(aug, params, _bfs_parents(topo, [0]), random.Random(seed))
    assert all(check_local_consistency(s, v, aug, params) for v, s in enumerate(states))
    cg = oracle.compatible_edges(states)
    assert cg.n_components == 1 and cg.n_edges == aug.n_aug - 1
    assert not cg.dangling


@settings(max_examples=200, deadline=None)
@given(kind=st.integers(0, 3), rel=st.integers(0, 1), ek=st.integers(0, 1), d=st.integers(0, 1),
       payload=st.integers(0, 255))
def test_message_word_roundtrip_and_size(kind, rel, ek, d, payload):
    m = Message(kind, rel, ek, d, payload)
    w = m.encode()
    assert 0 <= w < 2**32
    assert Message.decode(w) == m


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 8), seed=seeds, parent=st.booleans())
def test_pi_successor_cycles_through_every_tree_neighbor(n, seed, parent):
    rng = random.Random(seed)
    chld = rng.sample(range(100), n)
    prnt = 1000 if parent else None
    s = NodeState(prnt=prnt, chld=chld)
    order = chld + ([prnt] if parent else [])
    u = order[0]
    seen = []
    for _ in range(len(order)):
        seen.append(u)
        u = pi_successor(s, u)
    assert u == order[0] and sorted(seen) == sorted(order)


@settings(max_examples=25, deadline=None)
@given(kind=st.sampled_from(GRAPH_KINDS), n=st.integers(1, 4), seed=seeds,
       strategy=st.sampled_from(STRATEGIES), preset=st.integers(0, N_PRESETS - 1))
def test_short_runs_respect_local_invariants(kind, n, seed, strategy, preset):
    """Every node stays locally consistent, restarts at most once and the monitor stays quiet."""
    w = adversary_init(generate(kind, n, seed), strategy, seed, preset)
    horizon = 6 * w.params.epoch_len
    for _ in range(200):
        if w.next_round() > horizon:
            break
        w.step()
        for v, node in enumerate(w.nodes):
            assert check_local_consistency(node.st, v, w.aug, w.params), (v, node.st)
    assert not w.trace.of_kind(tr.VIOLATION)
    assert all(c <= 1 for c in w.trace.restart_counts().values())
