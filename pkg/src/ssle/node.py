"""Per-node state machine: token traversal, phases, mergers, root transfer, restart.

A round at one node is split in two halves that the simulator interleaves
across all nodes:

* receive half: ``begin_round`` (timer tick, pending flip), one ``receive``
  call per incoming message, then ``end_receive`` (clear ``recent``, check
  expiration).  Restart requests raised here are applied by the simulator to
  the whole (v, shadow) pair once both have received.
* send half: ``act`` runs the root schedule and the token-holder logic and
  returns at most one outgoing message.

Root scheduling counters advance lazily: ``catch_up`` folds in the rounds a
node skipped because nothing could happen to it.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import IntEnum

from . import crossing
from .crossing import CrossScratch, EpochPlan, Role, SearchDriver
from .graph import AugmentedTopology, ScheduleParams


class Kind(IntEnum):
    PASS_TKN = 0
    ROOT_TRNS = 1
    PROPOSE = 2
    ACCEPT = 3


# message flags
REL_PARENT = 0  # sender is the receiver's parent
REL_CHILD = 1   # sender is the receiver's child
DISCOVERY = 0
RETRACTION = 1

# phase and traversal kinds
PROPOSE = 0
ACCEPT = 1
SEARCH = 0
ACCEPTING = 1

# root segments
SEG_EPOCH = 0      # inside a search or accepting epoch
SEG_TRANSFER = 1   # moving the root role toward the crossing port
SEG_PROPOSING = 2  # waiting for an accept

MESSAGE_BITS = 32


@dataclass(frozen=True, slots=True)
class Message:
    kind: int
    rel: int = 0
    epoch_kind: int = 0
    direction: int = 0
    payload: int = 0

    def encode(self) -> int:
        """Wire word: 2b kind, 1b rel, 1b epoch kind, 1b direction, 8b payload."""
        return ((self.kind & 3) | (self.rel & 1) << 2 | (self.epoch_kind & 1) << 3
                | (self.direction & 1) << 4 | (self.payload & 0xFF) << 5)

    @staticmethod
    def decode(word: int) -> "Message":
        return Message(word & 3, word >> 2 & 1, word >> 3 & 1, word >> 4 & 1, word >> 5 & 0xFF)


@dataclass
class NodeState:
    prnt: int | None = None
    chld: list[int] = field(default_factory=list)
    tkn: int = 0
    tkn_d: int | None = None
    recent: int = 0
    tmr: int = 0
    accpt: int = 0
    out_prop: int | None = None
    in_prop: dict[int, int] = field(default_factory=dict)
    hot: int = 0
    trav_kind: int = SEARCH
    bcast: int = 0
    # root scheduling
    phase_kind: int = PROPOSE
    epoch_idx: int = 0
    round_in_epoch: int = 0
    segment: int = SEG_EPOCH
    countdown: int = -1
    transfer_pending: int = 0
    flip_to: int | None = None
    # holder scratch
    hold_age: int = 0
    pending_accept: int | None = None
    cross: CrossScratch = field(default_factory=CrossScratch)
    driver: SearchDriver = field(default_factory=SearchDriver)

    @property
    def tree_nbrs(self) -> set[int]:
        s = set(self.chld)
        if self.prnt is not None:
            s.add(self.prnt)
        return s

    def copy(self) -> "NodeState":
        c = NodeState(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        c.chld = list(self.chld)
        c.in_prop = dict(self.in_prop)
        c.cross = self.cross.copy()
        c.driver = self.driver.copy()
        return c


def pi_successor(state: NodeState, u: int) -> int:
    """Next tree neighbor after ``u`` in the order: children, then parent."""
    order = state.chld if state.prnt is None else state.chld + [state.prnt]
    i = order.index(u)
    return order[(i + 1) % len(order)]


def fresh_restart_state(v: int, aug: AugmentedTopology, params: ScheduleParams) -> tuple[NodeState, NodeState]:
    """States of a physical node and its shadow right after a restart."""
    sv = aug.partner(v)
    phys = NodeState(
        prnt=None, chld=[sv], tkn=1, tkn_d=sv, recent=0, tmr=params.premature_floor,
        accpt=0, out_prop=None, in_prop={u: 0 for u in aug.physical_edges(v)},
        phase_kind=PROPOSE, epoch_idx=0, round_in_epoch=0, segment=SEG_EPOCH)
    shadow = NodeState(prnt=v, chld=[], tkn=0, tkn_d=v, recent=0, tmr=params.premature_floor)
    return phys, shadow


def check_local_consistency(state: NodeState, vid: int, aug: AugmentedTopology,
                            params: ScheduleParams) -> bool:
    """True iff every local invariant holds and every variable is in its domain.

    Root scheduling counters are not judged here; see ``clamp_schedule``.
    """
    nbrs = aug.adjacency[vid]
    partner = aug.partner(vid)
    shadow = aug.is_shadow(vid)
    s = state
    if s.prnt is not None and s.prnt not in nbrs:
        return False
    if len(set(s.chld)) != len(s.chld) or any(c not in nbrs for c in s.chld):
        return False
    if s.prnt is not None and s.prnt in s.chld:
        return False
    if shadow:
        if s.prnt != partner or s.chld:
            return False
    elif partner not in s.chld:
        return False
    if any(b not in (0, 1) for b in (s.tkn, s.recent, s.accpt, s.hot)):
        return False
    if s.recent and s.tkn:
        return False
    tn = s.tree_nbrs
    if s.tkn_d not in tn:
        return False
    if set(s.in_prop) != set(nbrs) - tn - {partner} or any(b not in (0, 1) for b in s.in_prop.values()):
        return False
    if not s.accpt and any(s.in_prop.values()):
        return False
    if s.out_prop is not None and (s.out_prop not in nbrs or s.out_prop == partner):
        return False
    if not 0 <= s.tmr <= params.tmr_expiry:
        return False
    if s.tkn and s.hot and not 0 <= s.hold_age <= 4:
        return False
    if s.tkn and not s.hot and s.prnt is not None:
        return False  # cold tokens only rest at roots
    if s.trav_kind not in (SEARCH, ACCEPTING) or not 0 <= s.bcast <= 0xFF:
        return False
    if s.pending_accept is not None and (s.pending_accept not in s.in_prop or not (s.tkn and s.hot)):
        return False
    if s.flip_to is not None and (s.flip_to not in s.chld or s.tkn or not s.recent or s.prnt is not None):
        return False
    cs = s.cross
    if not (0 <= cs.prefix_len <= params.B_id and 0 <= cs.prefix < (1 << max(cs.prefix_len, 0))
            and 0 <= cs.sel < 8 and cs.is_port in (0, 1) and 0 <= cs.seed_acc < (1 << 64)
            and 0 <= cs.role <= max(Role) and 0 <= cs.echo <= 0xFF):
        return False
    if cs.is_port and (cs.port_target is None or cs.port_target not in nbrs or cs.port_target in tn):
        return False
    if any(c not in s.chld or v not in (0, 1, 2) for c, v in cs.child_class.items()):
        return False
    return True


def clamp_schedule(state: NodeState, params: ScheduleParams) -> None:
    """Force root scheduling counters into their domains."""
    s = state
    s.phase_kind = s.phase_kind if s.phase_kind in (PROPOSE, ACCEPT) else PROPOSE
    if s.segment not in (SEG_EPOCH, SEG_TRANSFER, SEG_PROPOSING):
        s.segment = SEG_EPOCH
    n_epochs = params.S if s.phase_kind == PROPOSE else params.S + 2
    s.epoch_idx = min(max(s.epoch_idx, 0), n_epochs - 1)
    s.round_in_epoch = min(max(s.round_in_epoch, 0), params.epoch_len)
    if s.segment == SEG_PROPOSING:
        proposing_ok = (s.prnt is None and s.tkn and not s.hot and s.out_prop is not None
                        and s.out_prop not in s.tree_nbrs)
        if not proposing_ok:
            s.segment = SEG_EPOCH
    if s.segment == SEG_PROPOSING:
        s.countdown = min(max(s.countdown, 1), params.propose_wait - 1)
    else:
        s.countdown = -1
    if s.transfer_pending not in (0, 1, 2) or s.segment != SEG_TRANSFER:
        s.transfer_pending = 0
    if s.segment == SEG_TRANSFER and not s.transfer_pending:
        s.segment = SEG_EPOCH  # a transfer with nothing left to do
    d = s.driver
    d.seed &= crossing.MASK64
    d.failed = 1 if d.failed else 0
    d.sel = d.sel & 7
    d.nbits = min(max(d.nbits, 0), params.B_id)
    d.bits &= (1 << d.nbits) - 1


class Node:
    """A node bound to its place in the augmented graph."""

    def __init__(self, vid: int, aug: AugmentedTopology, params: ScheduleParams,
                 world, seed: int = 0, probe_width: int = crossing.DEFAULT_PROBE_WIDTH):
        self.id = vid
        self.aug = aug
        self.params = params
        self.plan = EpochPlan(params.B_id)
        self.width = probe_width
        self.world = world
        self.seed = seed
        self.shadow = aug.is_shadow(vid)
        self.partner = aug.partner(vid)
        self.nbrs = aug.adjacency[vid]
        self.phys = aug.physical_edges(vid)
        self.st = NodeState()
        self.token: int | None = None  # ledger id of the token held (tkn = 1)
        self.sent: int | None = None   # ledger id of the token just dispatched (recent = 1)
        self.synced = -1               # last round folded into the counters
        self.restart_cause: str | None = None
        self.acquired_now = False
        self.restarts = 0
        self.rng = random.Random(f"node:{seed}:{vid}:0")
        # frequently used constants
        self._floor = params.premature_floor
        self._expiry = params.tmr_expiry
        self._epoch_len = params.epoch_len
        self._S = params.S

    # ----------------------------------------------------------------- restart
    def reset(self, state: NodeState, round_: int) -> None:
        """Install a fresh restart state (called by the simulator for both nodes of a pair)."""
        self.st = state
        self.token = None
        self.sent = None
        self.restart_cause = None
        self.acquired_now = False
        self.synced = round_ - 1
        if not self.shadow:
            self.restarts += 1
            self.rng = random.Random(f"node:{self.seed}:{self.id}:{self.restarts}")
            state.driver.reset(self.rng.getrandbits(64))

    # ----------------------------------------------------------- receive half
    def catch_up(self, t: int) -> None:
        d = t - self.synced - 1
        if d > 0:
            st = self.st
            st.tmr += d
            if st.prnt is None:
                if st.segment == SEG_EPOCH:
                    st.round_in_epoch += d
                elif st.segment == SEG_PROPOSING:
                    st.countdown -= d
        self.synced = t - 1

    def begin_round(self, t: int) -> None:
        self.catch_up(t)
        st = self.st
        st.tmr += 1
        self.acquired_now = False
        if st.flip_to is not None:
            # second half of a root transfer: become a child of the new root
            w = st.flip_to
            st.flip_to = None
            st.chld.remove(w)
            st.prnt = w

    def receive(self, t: int, sender: int, msg: Message, token: int | None) -> None:
        k = msg.kind
        if k == Kind.PASS_TKN:
            self.handle_pass_tkn(t, sender, msg, token)
        elif k == Kind.ROOT_TRNS:
            self.handle_root_trns(t, sender, msg, token)
        elif k == Kind.PROPOSE:
            self.handle_propose(t, sender)
        else:
            self.handle_accept(t, sender)

    def end_receive(self, t: int) -> None:
        st = self.st
        st.recent = 0
        self.sent = None
        if st.tmr > self._expiry and self.restart_cause is None:
            self.restart_cause = "expiration"

    def handle_pass_tkn(self, t: int, sender: int, msg: Message, token: int | None) -> bool:
        st = self.st
        ok = (st.tkn == 0 and st.recent == 0 and st.tkn_d == sender
              and ((sender == st.prnt and msg.rel == REL_PARENT)
                   or (msg.rel == REL_CHILD and sender in st.chld)))
        if not ok:
            self.world.token_died(t, token, self.id, "ignored_dispatch")
            return False
        st.tkn = 1
        st.hot = 1
        st.hold_age = 0
        self.token = token
        self.acquired_now = True
        self.world.token_moved(t, token, sender, self.id, True)
        if sender == st.prnt:
            if st.tmr < self._floor:
                self.restart_cause = "premature_discovery"
                return True
            self._discover(t, msg.epoch_kind, msg.payload)
        elif st.trav_kind == SEARCH:
            crossing.on_child_echo(st.cross, sender, msg.payload)
        return True

    def handle_root_trns(self, t: int, sender: int, msg: Message, token: int | None) -> bool:
        st = self.st
        ok = (st.tkn == 0 and st.recent == 0 and st.tkn_d == sender and sender == st.prnt
              and st.out_prop is not None)
        if not ok:
            self.world.token_died(t, token, self.id, "ignored_dispatch")
            return False
        st.tkn = 1
        st.hot = 0
        st.prnt = None
        st.chld.append(sender)
        st.phase_kind = PROPOSE
        st.segment = SEG_TRANSFER
        st.transfer_pending = 2
        st.countdown = -1
        self.token = token
        self.acquired_now = True
        self.world.token_moved(t, token, sender, self.id, False)
        return True

    def handle_propose(self, t: int, sender: int) -> None:
        st = self.st
        if st.accpt and sender in st.in_prop:
            st.in_prop[sender] = 1

    def handle_accept(self, t: int, sender: int) -> None:
        st = self.st
        if not (st.segment == SEG_PROPOSING and st.countdown > 0 and sender == st.out_prop
                and st.prnt is None and st.tkn and not st.hot):
            return
        st.prnt = sender
        st.tkn = 0
        st.tkn_d = sender
        st.out_prop = None
        st.countdown = -1
        st.segment = SEG_EPOCH
        st.in_prop.pop(sender, None)
        token, self.token = self.token, None
        self.world.token_died(t, token, self.id, "dissolved")
        self.world.merged(t, self.id, sender)

    def _discover(self, t: int, kind: int, payload: int) -> None:
        st = self.st
        st.tmr = 0
        st.out_prop = None
        st.trav_kind = kind
        st.bcast = payload
        if kind == SEARCH:
            if st.accpt:
                st.accpt = 0
                self.world.accpt_changed(t, self.id, 0)
            ip = st.in_prop
            for k in ip:
                ip[k] = 0
            crossing.on_discovery(st.cross, payload, self.phys, st.tree_nbrs,
                                  self.params.B_id, self.width)

    # -------------------------------------------------------------- send half
    def act(self, t: int):
        """Send half of round t; returns (receiver, message, token) or None."""
        st = self.st
        out = None
        if st.prnt is None:
            out = self.root_schedule(t)
        if out is None and st.tkn and st.hot:
            out = self.holder_step(t)
        elif out is None and st.prnt is None and st.segment == SEG_TRANSFER:
            if st.transfer_pending == 2:
                st.transfer_pending = 1
            elif st.transfer_pending == 1:
                if st.tkn:
                    out = self.root_transfer_step(t)
                else:
                    self.world.restart_pair(t, self.id, "no_cold_token")
                    out = self.root_schedule(t)
        self.synced = t
        return out

    def root_schedule(self, t: int):
        st = self.st
        if st.segment == SEG_EPOCH:
            out = None
            if st.round_in_epoch >= self._epoch_len:
                self._end_epoch(t)
            if st.segment == SEG_EPOCH:
                if st.round_in_epoch == 0:
                    out = self._initiate(t)
                    st = self.st  # a restart may have replaced the state
                st.round_in_epoch += 1
            return out
        if st.segment == SEG_PROPOSING:
            st.countdown -= 1
            if st.countdown <= 0:
                # no accept arrived in time
                st.out_prop = None
                st.countdown = -1
                self._new_phase(t)
        return None

    def _end_epoch(self, t: int) -> None:
        st = self.st
        st.epoch_idx += 1
        st.round_in_epoch = 0
        if st.phase_kind == PROPOSE and st.epoch_idx >= self._S:
            if st.out_prop is not None:
                st.segment = SEG_TRANSFER
                st.transfer_pending = 2
                self.world.transfer_started(t, self.id)
            else:
                self._new_phase(t)
        elif st.phase_kind == ACCEPT and st.epoch_idx >= self._S + 2:
            self._new_phase(t)

    def _new_phase(self, t: int) -> None:
        st = self.st
        st.phase_kind = ACCEPT if self.rng.random() < 0.5 else PROPOSE
        st.epoch_idx = 0
        st.round_in_epoch = 0
        st.segment = SEG_EPOCH
        st.countdown = -1
        st.transfer_pending = 0
        if st.phase_kind == PROPOSE:
            st.driver.reset(self.rng.getrandbits(64))
        self.world.phase_started(t, self.id, st.phase_kind)

    def _initiate(self, t: int):
        st = self.st
        if not (st.tkn and not st.hot):
            self.world.restart_pair(t, self.id, "no_cold_token")
            st = self.st
        if st.tmr < self._floor:
            self.world.restart_pair(t, self.id, "premature_discovery")
            st = self.st
        kind = SEARCH if st.phase_kind == PROPOSE else ACCEPTING
        payload = st.driver.discovery_payload(st.epoch_idx, self.plan) if kind == SEARCH else 0
        self._discover(t, kind, payload)
        st.hot = 1
        st.hold_age = 0
        self.world.traversal_started(t, self.id, self.token, kind, st.epoch_idx)
        return self._dispatch(t, st.chld[0])

    def _retraction_ready(self) -> bool:
        st = self.st
        return not self.shadow and bool(st.chld) and st.tkn_d == st.chld[-1]

    def _has_proposals(self) -> bool:
        st = self.st
        return (not self.shadow and st.trav_kind == ACCEPTING and st.accpt == 1
                and any(st.in_prop.values()))

    def holder_step(self, t: int):
        st = self.st
        root = st.prnt is None
        if self.acquired_now:
            if root and self._retraction_ready() and not self._has_proposals():
                self._accomplish(t)
            return None
        st.hold_age += 1
        if st.pending_accept is not None:
            x = st.pending_accept
            st.pending_accept = None
            st.chld.append(x)
            st.in_prop.pop(x, None)
            return self._dispatch(t, x)
        if self._retraction_ready():
            if self._has_proposals():
                return self.process_proposals(t)
            if root:
                self._accomplish(t)
                return None
        return self._dispatch(t, pi_successor(st, st.tkn_d))

    def process_proposals(self, t: int):
        """Answer the proposer with the smallest connecting edge ID."""
        st = self.st
        x = min((u for u, b in st.in_prop.items() if b), key=self.nbrs.__getitem__)
        st.pending_accept = x
        return (x, Message(Kind.ACCEPT), None)

    def _accomplish(self, t: int) -> None:
        """Root receives the token back from its last child: the traversal ends."""
        st = self.st
        st.hot = 0
        if st.trav_kind == ACCEPTING:
            if not st.accpt:
                st.accpt = 1
                self.world.accpt_changed(t, self.id, 1)
        else:
            cs = st.cross
            if cs.role == Role.SAFETY:
                cls, out = crossing.retraction_echo(cs)
                st.out_prop = out
                self.world.safety_done(t, self.id, cls)
            elif st.segment == SEG_EPOCH and st.phase_kind == PROPOSE and st.epoch_idx < self._S:
                st.driver.absorb(st.epoch_idx, self.plan, cs.echo, self.width)
        self.world.traversal_done(t, self.id, self.token)

    def _dispatch(self, t: int, succ: int):
        st = self.st
        if succ != st.prnt:
            msg = Message(Kind.PASS_TKN, REL_PARENT, st.trav_kind, DISCOVERY, st.bcast)
        else:
            payload = 0
            if st.trav_kind == ACCEPTING:
                if not st.accpt:
                    st.accpt = 1
                    self.world.accpt_changed(t, self.id, 1)
            else:
                payload, out = crossing.retraction_echo(st.cross)
                if st.cross.role == Role.SAFETY:
                    st.out_prop = out
            msg = Message(Kind.PASS_TKN, REL_CHILD, st.trav_kind, RETRACTION, payload)
        st.tkn = 0
        st.hot = 0
        st.hold_age = 0
        st.tkn_d = succ
        st.recent = 1
        self.sent, self.token = self.token, None
        return (succ, msg, self.sent)

    def root_transfer_step(self, t: int):
        st = self.st
        st.transfer_pending = 0
        w = st.out_prop
        if w is not None and w in st.chld:
            st.tkn = 0
            st.tkn_d = w
            st.out_prop = None
            st.recent = 1
            st.flip_to = w
            self.sent, self.token = self.token, None
            return (w, Message(Kind.ROOT_TRNS), self.sent)
        if w is not None and w in st.in_prop:
            return self.begin_proposing(t)
        # failed search: nothing to propose over
        st.out_prop = None
        self._new_phase(t)
        return None

    def begin_proposing(self, t: int):
        st = self.st
        st.segment = SEG_PROPOSING
        st.countdown = self.params.propose_wait - 1
        self.world.proposed(t, self.id, st.out_prop)
        return (st.out_prop, Message(Kind.PROPOSE), None)

    # ------------------------------------------------------------------ waking
    def next_wake(self, t: int) -> int:
        """Earliest round after ``t`` in which this node can do anything unprompted."""
        st = self.st
        if st.recent or st.flip_to is not None or (st.tkn and st.hot) or st.transfer_pending:
            return t + 1
        w = t + self._expiry - st.tmr + 1
        if st.prnt is None:
            if st.segment == SEG_EPOCH:
                r = st.round_in_epoch
                w2 = t + 1 if r == 0 else t + 1 + self._epoch_len - r
                if w2 < w:
                    w = w2
            elif st.segment == SEG_PROPOSING:
                w2 = t + max(st.countdown, 1)
                if w2 < w:
                    w = w2
        return max(w, t + 1)
