"""Global-view analysis of world snapshots and traces.

Nothing here feeds back into the protocol; it only judges it.  Snapshot
functions take the list of per-node states (indexable by node id).
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .graph import ScheduleParams, Topology
from .node import Kind, NodeState
from . import trace as tr


def functional_components(nxt: list[int | None]) -> tuple[list[int], list[int]]:
    """Weak components of a graph with at most one out-link per node.

    Returns (comp_of, terminal) where terminal[c] is the node that ends every
    walk in component c: a node without out-link, or some node of its cycle.
    """
    n = len(nxt)
    comp = [-1] * n
    stamp = [-1] * n
    terminal: list[int] = []
    for v in range(n):
        if comp[v] >= 0:
            continue
        path = []
        u = v
        while True:
            if comp[u] >= 0:
                c = comp[u]
                break
            if stamp[u] == v:
                c = len(terminal)
                terminal.append(u)
                break
            stamp[u] = v
            path.append(u)
            w = nxt[u]
            if w is None:
                c = len(terminal)
                terminal.append(u)
                break
            u = w
        for x in path:
            comp[x] = c
    return comp, terminal


def _groups(comp_of: list[int], k: int) -> list[set[int]]:
    out: list[set[int]] = [set() for _ in range(k)]
    for v, c in enumerate(comp_of):
        out[c].add(v)
    return out


@dataclass
class CompatibleGraph:
    """Edges whose parent/child records agree at both ends; ``up[c]`` is c's compatible parent."""

    states: list = field(repr=False)
    up: list[int | None]
    comp_of: list[int]
    n_components: int

    @property
    def edges(self) -> set[tuple[int, int]]:  # (parent, child)
        return {(p, c) for c, p in enumerate(self.up) if p is not None}

    @property
    def n_edges(self) -> int:
        return sum(p is not None for p in self.up)

    @property
    def components(self) -> list[set[int]]:
        return _groups(self.comp_of, self.n_components)

    def has(self, v: int, w: int) -> bool:
        return self.up[v] == w or self.up[w] == v

    def undirected(self) -> set[frozenset]:
        return {frozenset(e) for e in self.edges}

    @property
    def dangling(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        up = self.up
        for v, s in enumerate(self.states):
            bad = [w for w in s.chld if not (0 <= w < len(up) and up[w] == v)]
            if s.prnt is not None and up[v] != s.prnt:
                bad.append(s.prnt)
            if bad:
                out[v] = bad
        return out


@dataclass
class DeltaGraph:
    delta: list[int | None]
    comp_of: list[int]
    selfish: list[bool]

    @property
    def components(self) -> list[set[int]]:
        return _groups(self.comp_of, len(self.selfish))

    def uncovered(self) -> set[int]:
        sf = self.selfish
        return {v for v, c in enumerate(self.comp_of) if not sf[c]}


def owns(s: NodeState) -> bool:
    return s.tkn == 1 or s.recent == 1


def compatible_edges(states) -> CompatibleGraph:
    n = len(states)
    up: list[int | None] = [None] * n
    for c, s in enumerate(states):
        p = s.prnt
        if p is not None and 0 <= p < n and c in states[p].chld:
            up[c] = p
    comp_of, term = functional_components(up)
    return CompatibleGraph(states, up, comp_of, len(term))


def _compatible(states, v: int, w: int) -> bool:
    s, o = states[v], states[w]
    return (s.prnt == w and v in o.chld) or (o.prnt == v and w in s.chld)


def delta_value(states, v: int) -> int | None:
    s = states[v]
    if s.tkn == 1 or s.recent == 1:
        return v
    d = s.tkn_d
    if d is not None and 0 <= d < len(states) and _compatible(states, v, d):
        return d
    return None


def delta_graph(states) -> DeltaGraph:
    n = len(states)
    delta = [delta_value(states, v) for v in range(n)]
    nxt = [None if d == v else d for v, d in enumerate(delta)]
    comp_of, term = functional_components(nxt)
    selfish = [delta[u] == u for u in term]
    return DeltaGraph(delta, comp_of, selfish)


def is_strong_token(states, owner: int) -> bool:
    """Owner's δ-component has no dangling edges and is a whole compatible component."""
    dg = delta_graph(states)
    cg = compatible_edges(states)
    comp = dg.components[dg.comp_of[owner]]
    dangling = cg.dangling
    if any(v in dangling for v in comp):
        return False
    return comp == cg.components[cg.comp_of[owner]]


def is_stabilized(states, alive_tokens: int) -> bool:
    """One alive token whose δ-component spans everything, over a spanning compatible tree."""
    if alive_tokens != 1:
        return False
    n = len(states)
    cg = compatible_edges(states)
    if cg.n_components != 1 or cg.n_edges != n - 1:
        return False
    dg = delta_graph(states)
    return len(dg.selfish) == 1 and dg.selfish[0]


def brute_force_crossing_edges(topology: Topology, subset) -> set[int]:
    inside = set(subset)
    out = set()
    for u, v, eid in topology.edges:
        if (u in inside) != (v in inside):
            out.add(eid)
    return out


def tree_members(states, root: int) -> list[int]:
    """Nodes reachable from ``root`` along child lists (cycle-safe)."""
    seen = {root}
    order = [root]
    i = 0
    while i < len(order):
        for c in states[order[i]].chld:
            if c not in seen:
                seen.add(c)
                order.append(c)
        i += 1
    return order


def out_prop_path_ok(states, root: int) -> bool:
    """Exactly one port in the root's tree, and out_prop values chain root -> port."""
    members = tree_members(states, root)
    marked = {v for v in members if states[v].out_prop is not None}
    ports = [v for v in marked if states[v].out_prop not in states[v].tree_nbrs]
    if len(ports) != 1:
        return False
    path = [root]
    v = root
    while states[v].out_prop in states[v].chld:
        v = states[v].out_prop
        if v in path:
            return False
        path.append(v)
    return v == ports[0] and set(path) == marked


# ------------------------------------------------------------------ online checks
class RoundMonitor:
    """Structural assertions evaluated while a world runs.

    Dispatch predictions are checked for every token-carrying delivery.
    Snapshot checks run at most once per ``cadence`` rounds; because quiet
    rounds only advance counters, checking at processed rounds is equivalent
    to checking every round.
    """

    def __init__(self, params: ScheduleParams, cadence: int = 1):
        self.params = params
        self.cadence = max(1, cadence)
        self.violations: list[tuple[int, str, str]] = []
        self.checked = defaultdict(int)
        self._pending: dict[int, tuple[int, int, bool]] = {}
        self._prev_uncovered: set[int] | None = None
        self._restarted: set[int] = set()
        self._last_obs = -10**18

    def flag(self, t: int, check: str, detail: str = "") -> None:
        self.violations.append((t, check, detail))

    # dispatch success criterion
    def predict(self, states, t: int, deliveries) -> None:
        if t < 2:
            return
        for src, dst, msg, tok in deliveries:
            if tok is None:
                continue
            ok = delta_value(states, dst) == src
            if msg.kind == Kind.ROOT_TRNS:
                ok = ok and states[dst].out_prop is not None
            self._pending[tok] = (dst, src, ok)

    def outcome(self, t: int, tok: int, acquired: bool) -> None:
        entry = self._pending.pop(tok, None)
        if entry is None:
            return
        self.checked["dispatch_success"] += 1
        if entry[2] != acquired:
            self.flag(t, "dispatch_success",
                      f"token {tok} {entry[1]}->{entry[0]} predicted {entry[2]} got {acquired}")

    def on_restart(self, nodes) -> None:
        self._restarted.update(nodes)

    def end_round(self, t: int, nodes, alive: set[int]) -> None:
        if self._pending:
            for tok in list(self._pending):
                self.flag(t, "dispatch_success", f"token {tok} delivery unresolved")
            self._pending.clear()
        if t - self._last_obs < self.cadence:
            return
        self._last_obs = t
        self.observe(t, nodes, alive)

    def observe(self, t: int, nodes, alive: set[int]) -> None:
        states = [x.st for x in nodes]
        self.checked["snapshot"] += 1
        # ownership agrees with the ledger
        owned = set()
        for x in nodes:
            s = x.st
            if s.tkn:
                tok = x.token
            elif s.recent:
                tok = x.sent
            else:
                continue
            if tok is None or tok in owned:
                self.flag(t, "ownership", f"node {x.id} owns no distinct token")
            owned.add(tok)
            if s.tkn and s.hot and s.hold_age > 4:
                self.flag(t, "hold_bound", f"node {x.id} hold_age {s.hold_age}")
        if owned != alive:
            self.flag(t, "ownership", f"owned {sorted(owned)} alive {sorted(alive)}")
        cg = compatible_edges(states)
        dg = delta_graph(states)
        for v, d in enumerate(dg.delta):
            if d is not None and d != v and not cg.has(v, d):
                self.flag(t, "delta_compatible", f"delta edge {v}->{d} not compatible")
        owners_per_comp = defaultdict(int)
        for v, s in enumerate(states):
            if owns(s):
                owners_per_comp[dg.comp_of[v]] += 1
        for c, selfish in enumerate(dg.selfish):
            if owners_per_comp[c] != (1 if selfish else 0):
                self.flag(t, "selfish_owner", f"component {c} owners {owners_per_comp[c]}")
        unc = dg.uncovered()
        if self._prev_uncovered is not None:
            lost = (self._prev_uncovered - self._restarted) - unc
            if lost:
                self.flag(t, "uncovered_persistence", f"nodes {sorted(lost)} became covered")
        self._prev_uncovered = unc
        self._restarted = set()

    def check_op2(self, t: int, nodes, root: int) -> None:
        states = [x.st for x in nodes]
        self.checked["op2"] += 1
        if states[root].out_prop is not None and not out_prop_path_ok(states, root):
            self.flag(t, "op2", f"root {root} out_prop path malformed")


# ----------------------------------------------------------------- offline checks
@dataclass
class Verdict:
    ok: bool
    first_round: int | None = None
    detail: str = ""


@dataclass
class TraceReport:
    verdicts: dict[str, Verdict] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts.values())

    def bits(self) -> str:
        return "".join("1" if v.ok else "0" for v in self.verdicts.values())

    def failed(self) -> list[str]:
        return [k for k, v in self.verdicts.items() if not v.ok]


CHECK_NAMES = ("restart_once", "late_faults", "post_stab_messages", "tree_shape",
               "span_bounds", "traversal_length", "message_size", "one_emission",
               "token_count", "silence_after_restart", "structural")


def _status_spans(events_by_token, tokens, end_time: int):
    """Yield (token, hot, start_time, length) for maximal equal-status stretches."""
    for tid, rec in tokens.items():
        start = 0 if rec.birth_cause == "initial" else rec.birth_round + 1
        end = rec.death_round + 1 if rec.death_round is not None else end_time
        changes = [(start, rec.hot_at_birth)]
        for r, kind, hot in events_by_token.get(tid, ()):
            changes.append((r + 1, hot))
        cur_t, cur_h = changes[0]
        for tt, h in changes[1:]:
            if h != cur_h:
                yield tid, cur_h, cur_t, tt - cur_t
                cur_t, cur_h = tt, h
        yield tid, cur_h, cur_t, end - cur_t


def check_trace(trace: tr.Trace, params: ScheduleParams) -> TraceReport:
    rep = TraceReport()
    V = rep.verdicts
    n = trace.n_phys
    C = params.C_tr * params.N
    t_rec = params.recovery_round

    # (a) at most one restart per node
    counts = trace.restart_counts()
    bad = [v for v, c in counts.items() if c > 1]
    V["restart_once"] = Verdict(not bad, None, f"nodes {bad}" if bad else "")

    # (b) no restart and no token death from the recovery round on
    late = [e for e in trace.events
            if e[0] >= t_rec and (e[2] == tr.RESTART
                                  or (e[2] == tr.DEATH and e[4] != "dissolved"))]
    V["late_faults"] = Verdict(not late, late[0][0] if late else None,
                               str(late[0]) if late else "")

    rounds = np.frombuffer(trace.msg_round, dtype=np.int64) if len(trace.msg_round) else np.zeros(0, np.int64)
    src = np.frombuffer(trace.msg_src, dtype=np.int32) if len(trace.msg_src) else np.zeros(0, np.int32)
    dst = np.frombuffer(trace.msg_dst, dtype=np.int32) if len(trace.msg_dst) else np.zeros(0, np.int32)
    words = np.frombuffer(trace.msg_word, dtype=np.uint64) if len(trace.msg_word) else np.zeros(0, np.uint64)
    phys = (src < n) & (dst < n)

    # (c) after stabilization: at most one physical message per round, all on final tree edges
    ok_c, first_c, det_c = True, None, ""
    if trace.stabilization_round is not None:
        sel = phys & (rounds >= trace.stabilization_round)
        r_post = rounds[sel]
        if len(r_post):
            uniq, cnt = np.unique(r_post, return_counts=True)
            if cnt.max() > 1:
                ok_c, first_c, det_c = False, int(uniq[cnt > 1][0]), "two physical messages in a round"
        tree = {frozenset(e) for e in trace.final_tree}
        for r, s, d in zip(r_post, src[sel], dst[sel]):
            if frozenset((int(s), int(d))) not in tree:
                ok_c, first_c, det_c = False, int(r), f"message over non-tree edge {s}-{d}"
                break
    V["post_stab_messages"] = Verdict(ok_c, first_c, det_c)

    # token timelines
    moves = defaultdict(list)
    status = defaultdict(list)
    inits = []
    dones = {}
    for r, node, kind, a, b in trace.events:
        if kind == tr.MOVE:
            moves[a].append((r, b, node))
        elif kind == tr.INIT:
            status[a].append((r, kind, True))
            inits.append((r, node, a))
        elif kind == tr.DONE:
            status[a].append((r, kind, False))
            dones.setdefault((a, node), []).append(r)

    # (d) tree shape over windows of S * epoch_len rounds
    L = params.S * params.epoch_len
    ok_d, first_d, det_d = True, None, ""
    for tid, mv in moves.items():
        pending: dict[int, tuple[frozenset, int]] = {}
        for r, u, w in mv:
            e = frozenset((u, w))
            p = pending.pop(w, None)
            if p is not None and r - p[1] < L and p[0] != e:
                ok_d, first_d, det_d = False, r, f"token {tid} closed a cycle at {w}"
                break
            pending[u] = (e, r)
        if not ok_d:
            break
    V["tree_shape"] = Verdict(ok_d, first_d, det_d)

    # (e) hot spans < C, cold spans < 6C
    end_time = trace.last_round + 1
    ok_e, first_e, det_e = True, None, ""
    for tid, hot, start, length in _status_spans(status, trace.tokens, end_time):
        eff = length - max(0, 1 - start)  # only times >= 1 count
        limit = C if hot else 6 * C
        if eff >= limit:
            ok_e, first_e = False, start
            det_e = f"token {tid} {'hot' if hot else 'cold'} for {eff} rounds"
            break
    V["span_bounds"] = Verdict(ok_e, first_e, det_e)

    # (f) natural traversals shorter than C
    ok_f, first_f, det_f = True, None, ""
    for r0, root, tid in inits:
        ends = [r for r in dones.get((tid, root), ()) if r >= r0]
        if ends and min(ends) - r0 + 1 >= C:
            ok_f, first_f, det_f = False, r0, f"traversal at {root} took {min(ends) - r0 + 1}"
            break
    V["traversal_length"] = Verdict(ok_f, first_f, det_f)

    # (g) message size
    big = words >= np.uint64(1 << 32)
    V["message_size"] = Verdict(not big.any(), int(rounds[big][0]) if big.any() else None)

    # (h) one emission per node per round
    ok_h, first_h = True, None
    if len(rounds):
        key = rounds * (2 * n + 1) + src
        uniq, cnt = np.unique(key, return_counts=True)
        if cnt.max() > 1:
            ok_h, first_h = False, int(uniq[cnt > 1][0] // (2 * n + 1))
    V["one_emission"] = Verdict(ok_h, first_h)

    # (i) token count
    V["token_count"] = Verdict(len(trace.tokens) <= 2 * (2 * n), None, f"{len(trace.tokens)} tokens")

    # silence over physical edges after a restart
    ok_j, first_j, det_j = True, None, ""
    for r, node, kind, a, b in trace.events:
        if kind != tr.RESTART:
            continue
        sel = phys & (src == node) & (rounds > r) & (rounds <= r + params.restart_quiet)
        if sel.any():
            ok_j, first_j, det_j = False, int(rounds[sel][0]), f"node {node} restarted at {r}"
            break
    V["silence_after_restart"] = Verdict(ok_j, first_j, det_j)

    # violations the online monitor wrote into the trace
    viol = trace.of_kind(tr.VIOLATION)
    V["structural"] = Verdict(not viol, viol[0][0] if viol else None,
                              f"{viol[0][3]}: {viol[0][4]}" if viol else "")
    return rep
