from __future__ import annotations

import random

import networkx as nx
from hypothesis import given, settings, strategies as st

from ssle import oracle
from ssle import trace as tr
from ssle.graph import ScheduleParams, augment_shadows, generate
from ssle.node import fresh_restart_state
from ssle.oracle import (brute_force_crossing_edges, check_trace, compatible_edges, delta_graph,
                         functional_components, is_stabilized, is_strong_token)
from ssle.sim import RunConfig, adversary_init, run

from support import events, tree_world


def pair_states(n=1):
    aug = augment_shadows(generate("path", n))
    params = ScheduleParams(aug.N)
    states = [None] * aug.n_aug
    for v in range(n):
        states[v], states[v + n] = fresh_restart_state(v, aug, params)
    return states


# ---------------------------------------------------------------- snapshots
def test_post_restart_pair_has_one_compatible_edge():
    cg = compatible_edges(pair_states(1))
    assert cg.edges == {(0, 1)}
    assert cg.dangling == {}
    assert cg.n_components == 1


def test_one_sided_parent_pointer_is_dangling():
    states = pair_states(2)          # 0,1 physical; 2,3 shadows
    states[1].prnt = 0               # 1 claims 0 as parent, 0 does not list 1
    cg = compatible_edges(states)
    assert (0, 1) not in cg.edges
    assert 0 in cg.dangling[1]
    assert not cg.has(0, 1)


def test_stabilized_world_has_spanning_compatible_tree():
    res = run(RunConfig(kind="gnp", n=5, seed=3))
    states = res.world.states()
    cg = compatible_edges(states)
    g = nx.Graph()
    g.add_nodes_from(range(len(states)))
    g.add_edges_from(cg.edges)
    assert nx.is_tree(g)
    aug = res.world.aug
    assert all(v in aug.adjacency[u] for u, v in cg.edges)


def test_token_owner_has_a_self_loop():
    states = pair_states(1)
    dg = delta_graph(states)
    assert dg.delta[0] == 0 and dg.delta[1] == 0
    assert dg.selfish == [True]


def test_incompatible_token_direction_means_uncovered():
    states = pair_states(2)
    states[1].tkn = 0
    states[1].tkn_d = 0              # 0 is not a compatible neighbor of 1
    dg = delta_graph(states)
    assert dg.delta[1] is None
    assert 1 in dg.uncovered()


def test_successful_dispatch_moves_the_self_loop():
    w = adversary_init(generate("path", 1), "clean")
    before = delta_graph(w.states())
    assert before.delta[:2] == [0, 0]
    w.step()                          # round 0: 0 dispatches to its shadow
    mid = delta_graph(w.states())
    assert mid.delta[0] == 0          # still owns it through recent
    w.step()                          # round 1: shadow acquires
    after = delta_graph(w.states())
    assert after.delta[1] == 1 and after.delta[0] == 1


def test_fresh_pair_is_strong():
    assert is_strong_token(pair_states(1), 0)


def test_dangling_leaf_breaks_strength():
    states = pair_states(2)
    states[1].prnt = 0               # dangling edge at leaf 1 of nobody's tree
    states[0].tkn = 1
    assert not is_strong_token(states, 1)


def test_token_is_strong_right_after_a_natural_traversal():
    w = tree_world(3, [(0, 1, 5), (1, 2, 6)], {0: None, 1: 0, 2: 1})
    r = w.nodes[0].st
    r.tkn, r.hot, r.tkn_d, r.round_in_epoch = 1, 0, r.chld[-1], 0
    w.start()
    while not events(w, tr.DONE, 0):
        w.step()
    assert is_strong_token(w.states(), 0)


def test_two_separate_trees_are_not_stabilized():
    assert not is_stabilized(pair_states(2), 2)
    assert not is_stabilized(pair_states(2), 1)
    assert is_stabilized(pair_states(1), 1)


def test_crossing_edges_brute_force_basics():
    k4 = generate("complete", 4)
    assert brute_force_crossing_edges(k4, set(range(4))) == set()
    got = brute_force_crossing_edges(k4, {2})
    assert got == {eid for v, eid in k4.adjacency[2].items()} and len(got) == 3


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 14))
def test_crossing_edges_match_networkx_edge_boundary(seed, n):
    topo = generate("gnp", n, seed)
    rng = random.Random(seed)
    subset = {v for v in range(n) if rng.random() < 0.5} or {0}
    g = nx.Graph()
    g.add_weighted_edges_from(topo.edges, weight="eid")
    want = {g.edges[u, v]["eid"] for u, v in nx.edge_boundary(g, subset)}
    assert brute_force_crossing_edges(topo, subset) == want


@settings(max_examples=80, deadline=None)
@given(nxt=st.lists(st.one_of(st.none(), st.integers(0, 11)), min_size=1, max_size=12))
def test_functional_components_match_networkx(nxt):
    n = len(nxt)
    nxt = [None if (d is None or d >= n) else d for d in nxt]
    comp, term = functional_components(nxt)
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    g.add_edges_from((v, d) for v, d in enumerate(nxt) if d is not None)
    want = {frozenset(c) for c in nx.weakly_connected_components(g)}
    got: dict[int, set] = {}
    for v, c in enumerate(comp):
        got.setdefault(c, set()).add(v)
    assert {frozenset(c) for c in got.values()} == want
    assert len(term) == len(want)


# ------------------------------------------------------------ trace verdicts
def clean_trace():
    res = run(RunConfig(kind="complete", n=4, seed=0))
    return res.trace, res.params


def test_clean_k4_passes_every_verdict():
    trace, params = clean_trace()
    rep = check_trace(trace, params)
    assert rep.ok, rep.failed()
    assert rep.bits() == "1" * len(rep.verdicts)


def synthetic(n=2, N=8):
    return tr.Trace(n, N), ScheduleParams(N)


def test_double_restart_is_reported_with_the_node():
    t, p = synthetic()
    t.add(5, 1, tr.RESTART, "expiration")
    t.add(9, 1, tr.RESTART, "expiration")
    t.add(9, 0, tr.RESTART, "expiration")
    v = check_trace(t, p).verdicts["restart_once"]
    assert not v.ok and "[1]" in v.detail


def test_late_restart_and_late_death_are_reported():
    t, p = synthetic()
    t.add(p.recovery_round, 0, tr.RESTART, "expiration")
    assert not check_trace(t, p).verdicts["late_faults"].ok
    t, p = synthetic()
    t.add(p.recovery_round - 1, 0, tr.RESTART, "expiration")
    t.add(p.recovery_round + 3, 0, tr.DEATH, 0, "dissolved")
    assert check_trace(t, p).verdicts["late_faults"].ok
    t.add(p.recovery_round + 4, 0, tr.DEATH, 1, "ignored_dispatch")
    assert not check_trace(t, p).verdicts["late_faults"].ok


def test_post_stabilization_message_checks():
    t, p = synthetic(3, 16)
    t.stabilization_round = 10
    t.final_tree = [(0, 1), (1, 2), (0, 3), (1, 4), (2, 5)]
    t.add_message(11, 0, 1, 0)
    t.add_message(12, 3, 0, 0)        # shadow traffic is not counted
    t.add_message(12, 1, 2, 0)
    assert check_trace(t, p).verdicts["post_stab_messages"].ok
    t.add_message(12, 2, 1, 0)
    assert not check_trace(t, p).verdicts["post_stab_messages"].ok
    t2, _ = synthetic(3, 16)
    t2.stabilization_round = 0
    t2.final_tree = [(0, 1), (1, 2)]
    t2.add_message(4, 0, 2, 0)
    v = check_trace(t2, p).verdicts["post_stab_messages"]
    assert not v.ok and "non-tree" in v.detail


def test_message_size_and_single_emission():
    t, p = synthetic()
    t.add_message(1, 0, 1, 2**32)
    assert not check_trace(t, p).verdicts["message_size"].ok
    t, p = synthetic()
    t.add_message(1, 0, 1, 3)
    t.add_message(1, 0, 2, 3)
    assert not check_trace(t, p).verdicts["one_emission"].ok


def test_span_bounds_hot_and_cold():
    t, p = synthetic()
    C = p.C_tr * p.N
    t.tokens[0] = tr.TokenRecord(0, 0, 0, "restart", False, death_round=6 * C - 1)
    t.last_round = 10 * C
    assert check_trace(t, p).verdicts["span_bounds"].ok
    t.tokens[0].death_round = 6 * C + 1
    assert not check_trace(t, p).verdicts["span_bounds"].ok
    t, p = synthetic()
    t.tokens[0] = tr.TokenRecord(0, 0, 0, "restart", False)
    t.add(3, 0, tr.INIT, 0, "search")
    t.add(3 + C, 0, tr.DONE, 0)
    t.last_round = 3 + C + 5
    v = check_trace(t, p).verdicts
    assert not v["span_bounds"].ok and not v["traversal_length"].ok


def test_tree_shape_detects_a_cycle_walk():
    t, p = synthetic(3, 16)
    # token 0 walks 0 -> 1 -> 2 -> 0 and leaves 0 over a different edge than it entered by
    for r, (src, dst) in enumerate([(0, 1), (1, 2), (2, 0), (0, 1)]):
        t.add(2 * r + 1, dst, tr.MOVE, 0, src)
    assert not check_trace(t, p).verdicts["tree_shape"].ok
    t2, _ = synthetic(3, 16)
    for r, (src, dst) in enumerate([(0, 1), (1, 2), (2, 1), (1, 0)]):
        t2.add(2 * r + 1, dst, tr.MOVE, 0, src)
    assert check_trace(t2, p).verdicts["tree_shape"].ok


def test_token_count_and_silence_after_restart():
    t, p = synthetic(1, 4)
    for i in range(5):
        t.tokens[i] = tr.TokenRecord(i, 0, 0, "initial", True, death_round=0)
    assert not check_trace(t, p).verdicts["token_count"].ok
    t, p = synthetic(2, 8)
    t.add(3, 0, tr.RESTART, "expiration")
    t.add_message(4, 0, 2, 0)         # to its shadow: fine
    assert check_trace(t, p).verdicts["silence_after_restart"].ok
    t.add_message(5, 0, 1, 0)
    assert not check_trace(t, p).verdicts["silence_after_restart"].ok


def test_monitor_flags_uncovered_node_becoming_covered():
    states = pair_states(2)
    mon = oracle.RoundMonitor(ScheduleParams(8))

    class N:
        def __init__(self, i, s):
            self.id, self.st, self.token, self.sent = i, s, (i if s.tkn else None), None

    states[1].tkn, states[1].tkn_d = 0, 0       # uncovered, owns nothing
    nodes = [N(i, s) for i, s in enumerate(states)]
    mon.observe(0, nodes, {0})
    assert not mon.violations
    states[1].prnt, states[1].tkn_d = 0, 0       # now hangs off 0 compatibly
    states[0].chld.append(1)
    states[0].in_prop.pop(1, None)
    states[1].chld = [3]
    mon.observe(1, nodes, {0})
    assert any(v[1] == "uncovered_persistence" for v in mon.violations)


def test_monitor_flags_wrong_dispatch_prediction():
    from ssle.node import Kind, Message
    states = pair_states(1)
    mon = oracle.RoundMonitor(ScheduleParams(4))
    mon.predict(states, 5, [(1, 0, Message(Kind.PASS_TKN), 7)])
    mon.outcome(5, 7, True)           # 0 holds its own token, so delivery must fail
    assert [v[1] for v in mon.violations] == ["dispatch_success"]


def test_accepting_an_adversarial_flag_can_cover_an_uncovered_node():
    """A holder appending a neighbor whose parent pointer already names it covers that neighbor.

    Node 0 starts with prnt = 15 and tkn_d = 15 while 15 does not list it, so
    0 is uncovered.  Root 15 starts with accpt = 1 and in_prop(0) = 1, so its
    accepting traversal appends 0 and the edge turns compatible with no
    restart at 0.  The monitor reports this as an uncovered-persistence break.
    """
    w = adversary_init(generate("cycle", 16, 0), "random", 0)
    s0, s15 = w.nodes[0].st, w.nodes[15].st
    assert s0.prnt == 15 and 0 not in s15.chld and s15.accpt and s15.in_prop[0] == 1
    while w.next_round() <= 3:
        w.step()
    assert 0 in w.nodes[15].st.chld
    assert not events(w, tr.RESTART, 0)
    assert [(e[0], e[3]) for e in events(w, tr.VIOLATION)] == [(3, "uncovered_persistence")]
