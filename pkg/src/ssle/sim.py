"""Deterministic synchronous simulator with adversarial initial states.

Rounds in which nothing can happen to a node are skipped: every node
reports the next round it could act on its own (``Node.next_wake``), and a
round is processed only if some node wakes in it or a message is in flight.
Skipped rounds only advance counters, which nodes fold in lazily.
"""
from __future__ import annotations

import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field

from . import crossing
from . import oracle
from . import trace as tr
from .graph import AugmentedTopology, ScheduleParams, Topology, augment_shadows, generate
from .node import (ACCEPT, ACCEPTING, PROPOSE, SEARCH, SEG_EPOCH, SEG_PROPOSING, SEG_TRANSFER,
                   Kind, Message, Node, NodeState, check_local_consistency, clamp_schedule,
                   fresh_restart_state)

log = logging.getLogger(__name__)

STRATEGIES = ("clean", "random", "hostile")
N_PRESETS = 7
PRESET_NAMES = ("prnt_cycle", "two_tokens", "timers_full", "stale_out_prop",
                "tkn_d_mismatch", "fake_accpt", "counter_moving_pair")


class World:
    def __init__(self, aug: AugmentedTopology, params: ScheduleParams | None = None, seed: int = 0,
                 probe_width: int = crossing.DEFAULT_PROBE_WIDTH, cadence: int | None = None,
                 monitor: bool = True, strategy: str = "clean"):
        self.aug = aug
        self.params = params or ScheduleParams(aug.N)
        self.seed = seed
        self.n = aug.n_phys
        self.n_aug = aug.n_aug
        self.nodes = [Node(v, aug, self.params, self, seed, probe_width) for v in range(self.n_aug)]
        self.inflight: list[tuple[int, int, Message, int | None]] = []
        self.now = 0
        self.wake = [0] * self.n_aug
        self.alive: set[int] = set()
        self._next_tid = 0
        self.trace = tr.Trace(aug.n_phys, aug.N, seed, strategy, aug.topology.edges)
        if cadence is None:
            cadence = 1 if self.n <= 16 else 16
        self.monitor = oracle.RoundMonitor(self.params, cadence) if monitor else None
        self._in_send_half = False
        self._dirty: set[int] = set()
        self._extra_touched: set[int] = set()
        self._emitted: set[int] = set()
        self.started = False

    # ----------------------------------------------------------- token ledger
    def new_token(self, t: int, node: int, cause: str, hot: bool) -> int:
        tid = self._next_tid
        self._next_tid += 1
        self.trace.tokens[tid] = tr.TokenRecord(tid, t, node, cause, hot)
        self.alive.add(tid)
        self.trace.add(t, node, tr.BIRTH, tid, cause)
        return tid

    def token_died(self, t: int, tok: int | None, node: int, cause: str) -> None:
        if tok is None:
            return
        rec = self.trace.tokens[tok]
        if rec.death_round is not None:
            raise AssertionError(f"token {tok} dies twice")
        rec.death_round, rec.death_cause, rec.death_node = t, cause, node
        self.alive.discard(tok)
        self.trace.add(t, node, tr.DEATH, tok, cause)
        if self.monitor is not None and cause == "ignored_dispatch":
            self.monitor.outcome(t, tok, False)

    def token_moved(self, t: int, tok: int | None, src: int, dst: int, hot: bool) -> None:
        self.trace.add(t, dst, tr.MOVE, tok, src)
        if self.monitor is not None:
            self.monitor.outcome(t, tok, True)

    # ----------------------------------------------------------- node callbacks
    def merged(self, t: int, x: int, y: int) -> None:
        self.trace.add(t, x, tr.MERGE, y)

    def accpt_changed(self, t: int, v: int, value: int) -> None:
        self.trace.add(t, v, tr.ACCPT, value)

    def transfer_started(self, t: int, v: int) -> None:
        self.trace.add(t, v, tr.TRANSFER)

    def phase_started(self, t: int, v: int, kind: int) -> None:
        self.trace.add(t, v, tr.PHASE, "accept" if kind == ACCEPT else "propose")

    def traversal_started(self, t: int, v: int, tok, kind: int, epoch: int) -> None:
        self.trace.add(t, v, tr.INIT, tok, "search" if kind == SEARCH else "accepting")

    def traversal_done(self, t: int, v: int, tok) -> None:
        self.trace.add(t, v, tr.DONE, tok)

    def safety_done(self, t: int, v: int, cls: int) -> None:
        self.trace.add(t, v, tr.SAFETY, cls)
        if self.monitor is not None:
            self.monitor.check_op2(t, self.nodes, v)

    def proposed(self, t: int, x: int, y: int) -> None:
        self.trace.add(t, x, tr.PROPOSE, y)

    def restart_pair(self, t: int, v: int, cause: str) -> None:
        p = v if v < self.n else v - self.n
        s = p + self.n
        for x in (p, s):
            node = self.nodes[x]
            if node.token is not None:
                self.token_died(t, node.token, x, "restart_overwrite")
                node.token = None
        ps, ss = fresh_restart_state(p, self.aug, self.params)
        self.nodes[p].reset(ps, t)
        self.nodes[s].reset(ss, t)
        self.trace.add(t, p, tr.RESTART, cause)
        self.nodes[p].token = self.new_token(t, p, "restart", False)
        if self.monitor is not None:
            self.monitor.on_restart((p, s))
        if self._in_send_half:
            # the shadow acts after its physical node, so it has nothing left to do this round
            self.nodes[s].synced = t
            self._dirty.update((p, s))
        else:
            self._extra_touched.update((p, s))

    # --------------------------------------------------------------- stepping
    def start(self) -> None:
        """Round-0 bookkeeping: register initial tokens and repair inconsistent nodes."""
        if self.started:
            return
        self.started = True
        for node in self.nodes:
            s = node.st
            if s.tkn:
                node.token = self.new_token(0, node.id, "initial", bool(s.hot))
        fixed = []
        for i, (src, dst, msg, _) in enumerate(self.inflight):
            if msg.kind in (Kind.PASS_TKN, Kind.ROOT_TRNS):
                tok = self.new_token(0, src, "initial", msg.kind == Kind.PASS_TKN)
                self.nodes[src].sent = tok
            else:
                tok = None
            fixed.append((src, dst, msg, tok))
        self.inflight = fixed
        for p in range(self.n):
            bad = [x for x in (p, p + self.n)
                   if not check_local_consistency(self.nodes[x].st, x, self.aug, self.params)]
            for x in (p, p + self.n):
                clamp_schedule(self.nodes[x].st, self.params)
            if bad:
                self.restart_pair(0, p, "inconsistent")
        self._extra_touched = set(range(self.n_aug))
        self.wake = [0] * self.n_aug

    def next_round(self) -> int:
        if not self.started:
            return 0
        if self.inflight:
            return self.now
        return max(self.now, min(self.wake))

    def step(self) -> int:
        """Process the next round in which anything happens; returns its number."""
        if not self.started:
            self.start()
        t = self.next_round()
        self._process(t)
        self.now = t + 1
        return t

    def _process(self, t: int) -> None:
        nodes = self.nodes
        n = self.n
        inbox = defaultdict(list)
        for src, dst, msg, tok in self.inflight:
            inbox[dst].append((src, msg, tok))
        wake = self.wake
        touched = set(inbox)
        touched.update(v for v in range(self.n_aug) if wake[v] <= t)
        touched.update(self._extra_touched)
        self._extra_touched = set()
        if self.monitor is not None:
            self.monitor.predict([x.st for x in nodes], t, self.inflight)

        # receive half, pair by pair
        for p in sorted({v if v < n else v - n for v in touched}):
            members = [x for x in (p, p + n) if x in touched]
            for x in members:
                nodes[x].begin_round(t)
            for x in members:
                for src, msg, tok in sorted(inbox.get(x, ()), key=lambda m: m[0]):
                    nodes[x].receive(t, src, msg, tok)
            for x in members:
                nodes[x].end_receive(t)
            cause = nodes[p].restart_cause or nodes[p + n].restart_cause
            if cause:
                self.restart_pair(t, p, cause)
        touched |= self._extra_touched
        self._extra_touched = set()

        # send half, physical nodes before shadows
        out = []
        self._in_send_half = True
        self._dirty = set()
        for x in sorted(touched):
            node = nodes[x]
            r = node.act(t)
            if r is not None:
                dst, msg, tok = r
                carrier = tok if msg.kind in (Kind.PASS_TKN, Kind.ROOT_TRNS) else node.token
                if carrier is None and t > 0:
                    self._violation(t, x, "emission_without_token", f"{Kind(msg.kind).name} to {dst}")
                out.append((x, dst, msg, tok))
                self.trace.add_message(t, x, dst, msg.encode())
        self._in_send_half = False
        seen = set()
        for src, *_ in out:
            if src in seen:
                self._violation(t, src, "one_emission", "two messages in one round")
            seen.add(src)
        self.inflight = out
        for x in touched | self._dirty:
            wake[x] = nodes[x].next_wake(t)
        self.trace.last_round = t
        if self.monitor is not None:
            before = len(self.monitor.violations)
            self.monitor.end_round(t, nodes, self.alive)
            for vt, check, detail in self.monitor.violations[before:]:
                self.trace.add(vt, -1, tr.VIOLATION, check, detail)

    def _violation(self, t: int, node: int, check: str, detail: str) -> None:
        self.trace.add(t, node, tr.VIOLATION, check, detail)

    # ------------------------------------------------------------------ views
    def states(self) -> list[NodeState]:
        return [x.st for x in self.nodes]

    def tree_edges(self) -> list[tuple[int, int]]:
        return sorted(oracle.compatible_edges(self.states()).edges)


def detect_stabilization(world: World) -> bool:
    return oracle.is_stabilized(world.states(), len(world.alive))


# ------------------------------------------------------------------ adversary
def _bfs_parents(topology: Topology, roots) -> dict[int, int | None]:
    parent: dict[int, int | None] = {r: None for r in roots}
    frontier = list(roots)
    while frontier:
        nxt = []
        for u in frontier:
            for w in sorted(topology.adjacency[u]):
                if w not in parent:
                    parent[w] = u
                    nxt.append(w)
        frontier = nxt
    return parent


def _tree_states(aug: AugmentedTopology, params: ScheduleParams, parent: dict[int, int | None],
                 rng: random.Random) -> list[NodeState]:
    """Locally consistent states forming the (possibly cyclic) parent structure given."""
    n = aug.n_phys
    states = []
    children = defaultdict(list)
    for v, p in parent.items():
        if p is not None:
            children[p].append(v)
    for v in range(n):
        chld = [v + n] + sorted(children[v])
        prnt = parent.get(v)
        tn = set(chld) | ({prnt} if prnt is not None else set())
        s = NodeState(prnt=prnt, chld=chld, tkn=0, tkn_d=chld[-1] if prnt is None else prnt,
                      tmr=rng.randrange(params.tmr_expiry + 1),
                      in_prop={u: 0 for u in aug.physical_edges(v) if u not in tn},
                      phase_kind=rng.choice((PROPOSE, ACCEPT)), segment=SEG_EPOCH,
                      epoch_idx=rng.randrange(params.S), round_in_epoch=rng.randrange(params.epoch_len))
        s.driver.reset(rng.getrandbits(64))
        states.append(s)
    for v in range(n):
        states.append(NodeState(prnt=v, chld=[], tkn_d=v, tmr=rng.randrange(params.tmr_expiry + 1)))
    return states


def _random_state(v: int, aug: AugmentedTopology, params: ScheduleParams,
                  rng: random.Random) -> NodeState:
    """A locally consistent state with every field drawn from its domain."""
    shadow = aug.is_shadow(v)
    partner = aug.partner(v)
    nbrs = sorted(aug.physical_edges(v))
    s = NodeState()
    if shadow:
        s.prnt, s.chld = partner, []
    else:
        s.prnt = rng.choice(nbrs + [None])
        rest = [u for u in nbrs if u != s.prnt and rng.random() < 0.5]
        s.chld = rest + [partner]
        rng.shuffle(s.chld)
    tn = s.tree_nbrs
    s.tkn, s.recent = rng.choice(((1, 0), (0, 1), (0, 0)))
    s.hot = rng.randrange(2)
    if s.tkn and not s.hot and s.prnt is not None:
        s.hot = 1
    s.tkn_d = rng.choice(sorted(tn))
    s.tmr = rng.randrange(params.tmr_expiry + 1)
    s.accpt = rng.randrange(2)
    s.in_prop = {u: (rng.randrange(2) if s.accpt else 0) for u in nbrs if u not in tn}
    if not shadow:
        s.out_prop = rng.choice(nbrs + [None])
    s.trav_kind = rng.randrange(2)
    s.bcast = rng.randrange(256)
    s.phase_kind = rng.randrange(2)
    s.segment = rng.choice((SEG_EPOCH, SEG_EPOCH, SEG_TRANSFER, SEG_PROPOSING))
    s.epoch_idx = rng.randrange(params.S + 2)
    s.round_in_epoch = rng.randrange(params.epoch_len + 1)
    s.countdown = rng.randrange(-1, params.propose_wait)
    s.transfer_pending = rng.randrange(3)
    s.hold_age = rng.randrange(5)
    if s.tkn and s.hot and s.in_prop and rng.random() < 0.3:
        s.pending_accept = rng.choice(sorted(s.in_prop))
    cs = s.cross
    cs.seed_acc = rng.getrandbits(64)
    cs.sel = rng.randrange(8)
    cs.prefix_len = rng.randrange(params.B_id + 1)
    cs.prefix = rng.getrandbits(cs.prefix_len) if cs.prefix_len else 0
    cs.role = rng.randrange(len(crossing.Role))
    cs.echo = rng.randrange(256)
    cs.child_class = {c: rng.randrange(3) for c in s.chld if rng.random() < 0.5}
    s.driver.seed = rng.getrandbits(64)
    s.driver.failed = rng.randrange(2)
    s.driver.nbits = rng.randrange(params.B_id + 1)
    s.driver.bits = rng.getrandbits(s.driver.nbits) if s.driver.nbits else 0
    s.driver.sel = rng.randrange(8)
    return s


def _corrupt(s: NodeState, v: int, aug: AugmentedTopology, params: ScheduleParams,
             rng: random.Random) -> None:
    """Break one local invariant."""
    partner = aug.partner(v)
    choice = rng.randrange(5)
    if choice == 0:
        s.tmr = params.tmr_expiry + 1 + rng.randrange(params.tmr_expiry)
    elif choice == 1:
        s.tkn, s.recent = 1, 1
    elif choice == 2 and not aug.is_shadow(v):
        s.chld = [c for c in s.chld if c != partner]
    elif choice == 3:
        s.tkn_d = None
    else:
        s.in_prop[partner] = 0


def _random_inflight(states, aug, rng) -> list:
    msgs = []
    for v, s in enumerate(states):
        if s.tkn or not s.recent or rng.random() < 0.5:
            continue
        dst = rng.choice(sorted(aug.adjacency[v]))
        kind = rng.choice((Kind.PASS_TKN, Kind.PASS_TKN, Kind.ROOT_TRNS))
        msg = Message(kind, rng.randrange(2), rng.randrange(2), rng.randrange(2),
                      rng.randrange(256) if kind == Kind.PASS_TKN else 0)
        msgs.append((v, dst, msg, None))
    senders = {m[0] for m in msgs}
    for v in range(aug.n_phys):
        if v in senders or rng.random() < 0.8 or not aug.physical_edges(v):
            continue
        dst = rng.choice(sorted(aug.physical_edges(v)))
        msgs.append((v, dst, Message(rng.choice((Kind.PROPOSE, Kind.ACCEPT))), None))
    return msgs


def _give_token(s: NodeState, hot: bool) -> None:
    s.tkn, s.recent, s.hot, s.hold_age = 1, 0, int(hot), 0


def hostile_preset(k: int, aug: AugmentedTopology, params: ScheduleParams, rng: random.Random):
    """States and round-0 messages for the k-th crafted scenario."""
    import networkx as nx

    topo = aug.topology
    n = aug.n_phys
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from((u, v) for u, v, _ in topo.edges)
    msgs = []
    if k == 0:
        # parent pointers closing a cycle, so no compatible component has a root
        try:
            cyc = [u for u, _ in nx.find_cycle(g, source=0)]
        except nx.NetworkXNoCycle:
            cyc = [0, min(topo.adjacency[0])] if topo.adjacency[0] else [0]
        parent = _bfs_parents(topo, cyc)
        if len(cyc) > 2:
            for i, u in enumerate(cyc):
                parent[u] = cyc[(i + 1) % len(cyc)]
            states = _tree_states(aug, params, parent, rng)
        else:
            states = _tree_states(aug, params, parent, rng)
            if len(cyc) == 2:
                # mutual parents: each side keeps the other out of its child list
                a, b = cyc
                for x, y in ((a, b), (b, a)):
                    s = states[x]
                    s.prnt = y
                    s.tkn_d = y
                    s.in_prop.pop(y, None)
        _give_token(states[cyc[0]], True)
        states[cyc[0]].tkn_d = states[cyc[0]].chld[0]
    elif k == 1:
        # two tokens in one compatible component
        parent = _bfs_parents(topo, [0])
        states = _tree_states(aug, params, parent, rng)
        _give_token(states[0], False)
        leaf = max(range(n), key=lambda v: (len(states[v].chld) == 1, v))
        other = leaf if leaf != 0 else n  # shadow of the root when alone
        _give_token(states[other], True)
    elif k == 2:
        parent = _bfs_parents(topo, [0])
        states = _tree_states(aug, params, parent, rng)
        for s in states:
            s.tmr = params.tmr_expiry
        _give_token(states[0], False)
    elif k == 3:
        # a marked out_prop path leading out of the tree, with no token anywhere
        parent = _bfs_parents(topo, [0])
        states = _tree_states(aug, params, parent, rng)
        far = max(range(n), key=lambda v: (_depth(parent, v), v))
        path = [far]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        path.reverse()
        for a, b in zip(path, path[1:]):
            states[a].out_prop = b
        ext = [u for u in topo.adjacency[far] if u != parent[far]]
        states[far].out_prop = ext[0] if ext else None
        root = states[0]
        root.segment = SEG_TRANSFER
    elif k == 4:
        # every node points its token direction at its own shadow
        parent = _bfs_parents(topo, [0])
        states = _tree_states(aug, params, parent, rng)
        for v in range(n):
            states[v].tkn_d = v + n
        _give_token(states[0], True)
        for v in range(1, n):
            kids = [c for c in states[v].chld if c < n]
            if kids:
                states[v].recent = 1
                msgs.append((v, kids[0], Message(Kind.PASS_TKN, 0, SEARCH, 0, 0), None))
    elif k == 5:
        # every node alone, claiming to accept, with every proposal flag raised
        parent = {v: None for v in range(n)}
        states = _tree_states(aug, params, parent, rng)
        for v in range(n):
            s = states[v]
            s.accpt = 1
            s.in_prop = {u: 1 for u in s.in_prop}
            s.phase_kind = ACCEPT
            s.epoch_idx = rng.randrange(params.S + 2)
            s.trav_kind = ACCEPTING
            _give_token(s, False)
    elif k == 6:
        # two tokens crossing each other on one edge
        parent = _bfs_parents(topo, [0])
        states = _tree_states(aug, params, parent, rng)
        _give_token(states[0], False)
        kids = [c for c in states[0].chld if c < n]
        u, w = (0, kids[0]) if kids else (0, n)
        if kids:
            states[0].tkn = 0
            states[0].tkn_d = w
            states[0].recent = 1
            states[w].tkn_d = u
            states[w].recent = 1
            msgs.append((u, w, Message(Kind.PASS_TKN, 0, SEARCH, 0, 0), None))
            msgs.append((w, u, Message(Kind.PASS_TKN, 1, SEARCH, 1, 0), None))
            _give_token(states[n], True)  # root's shadow keeps a token too
            states[n].tkn_d = 0
    else:
        raise ValueError(f"unknown hostile preset {k}")
    return states, msgs


def _depth(parent, v):
    d = 0
    while parent.get(v) is not None and d <= len(parent):
        v = parent[v]
        d += 1
    return d


def adversary_init(topology: Topology, strategy: str = "clean", seed: int = 0, preset: int = 0,
                   probe_width: int = crossing.DEFAULT_PROBE_WIDTH, cadence: int | None = None,
                   monitor: bool = True) -> World:
    """Build a world whose time-0 state is chosen by the given adversary."""
    aug = augment_shadows(topology)
    params = ScheduleParams(topology.N)
    label = strategy if strategy != "hostile" else f"hostile:{preset}"
    world = World(aug, params, seed, probe_width, cadence, monitor, label)
    rng = random.Random(f"adversary:{strategy}:{preset}:{seed}")
    msgs = []
    if strategy == "clean":
        states = [None] * aug.n_aug
        for v in range(aug.n_phys):
            states[v], states[v + aug.n_phys] = fresh_restart_state(v, aug, params)
            states[v].driver.reset(rng.getrandbits(64))
    elif strategy == "random":
        states = [_random_state(v, aug, params, rng) for v in range(aug.n_aug)]
        for v, s in enumerate(states):
            if rng.random() < 0.3:
                _corrupt(s, v, aug, params, rng)
        msgs = _random_inflight(states, aug, rng)
    elif strategy == "hostile":
        if not 0 <= preset < N_PRESETS:
            raise ValueError(f"unknown hostile preset {preset}")
        states, msgs = hostile_preset(preset, aug, params, rng)
    else:
        raise ValueError(f"unknown adversary strategy {strategy!r}")
    for node, s in zip(world.nodes, states):
        node.st = s
    world.inflight = msgs
    world.start()
    return world


# ------------------------------------------------------------------------ run
@dataclass
class RunConfig:
    kind: str = "path"
    n: int = 2
    p: float = 0.5
    graph_seed: int | None = None
    strategy: str = "clean"
    preset: int = 0
    seed: int = 0
    max_rounds: int | None = None
    tail_rounds: int = 0
    probe_width: int = crossing.DEFAULT_PROBE_WIDTH
    cadence: int | None = None
    monitor: bool = True
    topology: Topology | None = field(default=None, repr=False)

    def build_topology(self) -> Topology:
        if self.topology is not None:
            return self.topology
        gseed = self.seed if self.graph_seed is None else self.graph_seed
        return generate(self.kind, self.n, gseed, self.p)


@dataclass
class RunResult:
    trace: tr.Trace
    params: ScheduleParams
    world: World


def default_cap(N: int) -> int:
    """Round budget: four times the 500 N log^2 N stabilization target."""
    lg = N.bit_length() - 1
    return 4 * 500 * N * lg * lg


def run(config: RunConfig) -> RunResult:
    topo = config.build_topology()
    world = adversary_init(topo, config.strategy, config.seed, config.preset,
                           config.probe_width, config.cadence, config.monitor)
    params = world.params
    cap = config.max_rounds if config.max_rounds is not None else default_cap(params.N)
    trace = world.trace
    window = params.epoch_len
    stab_since = None
    confirmed_at = None
    while True:
        t = world.next_round()
        if confirmed_at is None and stab_since is not None and t >= stab_since + window:
            confirmed_at = stab_since
            trace.stabilization_round = stab_since
            stop = stab_since + window + config.tail_rounds
        if confirmed_at is not None and t >= stop:
            break
        if t >= cap:
            if confirmed_at is None:
                trace.cap_exceeded = True
            break
        world.step()
        stable = oracle.is_stabilized(world.states(), len(world.alive)) if len(world.alive) == 1 else False
        if stable:
            if stab_since is None:
                stab_since = t + 1
        else:
            if confirmed_at is not None:
                world._violation(t, -1, "closure", "stabilized state was left")
                confirmed_at = None
                trace.stabilization_round = None
            stab_since = None
    trace.last_round = max(trace.last_round, min(t, cap) - 1)
    trace.final_tree = world.tree_edges()
    return RunResult(trace, params, world)
