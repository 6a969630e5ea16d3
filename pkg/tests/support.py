from __future__ import annotations

import random

from ssle.graph import ScheduleParams, Topology, augment_shadows, bound_for
from ssle.node import PROPOSE, SEG_EPOCH, fresh_restart_state
from ssle.sim import World, _tree_states


def make_topology(n: int, edges) -> Topology:
    """``edges`` is a list of (u, v, edge_id)."""
    adjacency: list[dict[int, int]] = [dict() for _ in range(n)]
    for u, v, eid in edges:
        adjacency[u][v] = eid
        adjacency[v][u] = eid
    topo = Topology(n, bound_for(n), adjacency)
    topo.validate()
    return topo


def tree_world(n: int, edges, parent: dict | None = None, seed: int = 0, cadence: int = 1) -> World:
    """World whose nodes in ``parent`` form one compatible tree; everyone else is a fresh pair.

    Tree nodes get quiet schedules (timers at the premature floor, no pending
    epoch signal), so tests can set exactly the fields they care about before
    calling ``world.start()``.
    """
    topo = make_topology(n, edges)
    aug = augment_shadows(topo)
    params = ScheduleParams(topo.N)
    world = World(aug, params, seed=seed, cadence=cadence)
    parent = parent or {}
    tree = _tree_states(aug, params, parent, random.Random(seed)) if parent else None
    for v in range(n):
        if v in parent:
            ps, ss = tree[v], tree[v + n]
            for s in (ps, ss):
                s.tmr = params.premature_floor
            ps.phase_kind, ps.epoch_idx, ps.round_in_epoch, ps.segment = PROPOSE, 0, 1, SEG_EPOCH
        else:
            ps, ss = fresh_restart_state(v, aug, params)
        world.nodes[v].st, world.nodes[v + n].st = ps, ss
    return world


def events(world: World, kind: str, node: int | None = None):
    return [e for e in world.trace.events if e[2] == kind and (node is None or e[1] == node)]


def run_until(world: World, last_round: int) -> None:
    if not world.started:
        world.start()
    while world.next_round() <= last_round:
        world.step()
