"""Bit-serial crossing-edge search run over the search epochs of a propose phase.

Each search epoch is one broadcast (piggybacked on discovery messages) and
one convergecast (piggybacked on retractions), each carrying at most 8 bits.
The epoch layout, 0-based:

    0..15          SEED    4 bits of a shared 64-bit sampling seed each
    16             PROBE   echo the parity of sampled incident edges, for
                           ``width`` independent sub-samples at once
    17             SELECT  broadcast the chosen sub-sample; echo lower-half parity
    18..16+B_id    BIT     broadcast the previously decided bit; echo parity
    17+B_id        VERIFY  last bit; echo the saturating count of ports
    18+B_id        SAFETY  ok flag; echo the count again and install out_prop

Tree edges are counted by both endpoints and cancel in the XOR, so the
tree-wide parity only sees crossing edges.  If the sampled crossing set of
the current ID range has odd size, exactly one of its halves does too, which
keeps a unique sampled crossing edge in reach of the binary search.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

MASK64 = (1 << 64) - 1
SEED_EPOCHS = 16
DEFAULT_PROBE_WIDTH = 8


class Role(IntEnum):
    IDLE = 0
    SEED = 1
    PROBE = 2
    SELECT = 3
    BIT = 4
    VERIFY = 5
    SAFETY = 6


def make_payload(role: Role, data: int = 0) -> int:
    return (int(role) << 5) | (data & 0x1F)


def split_payload(payload: int) -> tuple[int, int]:
    return (payload >> 5) & 0x7, payload & 0x1F


def mix64(x: int) -> int:
    """splitmix64 finalizer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def sample_edge(seed: int, edge_id: int) -> int:
    """Shared pseudo-random bit for an edge; both endpoints get the same value."""
    return mix64(seed ^ mix64(edge_id)) >> 63


def subsample_seed(seed: int, j: int) -> int:
    return mix64(seed ^ ((j + 1) * 0xD1B54A32D192ED03 & MASK64))


def local_range_parity(edge_ids, prefix: int, prefix_len: int, B_id: int, seed: int) -> int:
    """Parity of sampled incident edges whose ID starts with ``prefix`` then 0."""
    shift = B_id - prefix_len - 1
    want = prefix << 1
    p = 0
    for eid in edge_ids:
        if eid >> shift == want and sample_edge(seed, eid):
            p ^= 1
    return p


def probe_vector(edge_ids, seed: int, width: int) -> int:
    """Bit j = parity of incident edges under sub-sample j."""
    vec = 0
    for j in range(width):
        s = subsample_seed(seed, j)
        p = 0
        for eid in edge_ids:
            p ^= sample_edge(s, eid)
        vec |= p << j
    return vec


def decide_next_bit(lower_half_parity: int) -> int:
    return 0 if lower_half_parity & 1 else 1


def verify_candidate(phys_edges: dict[int, int], tree_nbrs, candidate: int) -> tuple[int, int | None]:
    """(is_port, external endpoint) for the candidate edge ID."""
    for nbr, eid in phys_edges.items():
        if eid == candidate:
            if nbr in tree_nbrs:
                return 0, None
            return 1, nbr
    return 0, None


def saturating_add(a: int, b: int) -> int:
    return min(2, a + b)


def safety_retraction(children_classes: dict[int, int], is_port: int,
                      port_target: int | None) -> tuple[int, int | None]:
    """Subtree port-count class and the out_prop value to install."""
    total = is_port
    for cls in children_classes.values():
        total = saturating_add(total, cls)
    if total != 1:
        return total, None
    if is_port:
        return 1, port_target
    for child, cls in children_classes.items():
        if cls == 1:
            return 1, child
    return 1, None  # unreachable when the class arithmetic is consistent


@dataclass(frozen=True)
class EpochPlan:
    B_id: int

    @property
    def total(self) -> int:
        return self.B_id + 19

    def role(self, epoch: int) -> Role:
        if epoch < SEED_EPOCHS:
            return Role.SEED
        if epoch == 16:
            return Role.PROBE
        if epoch == 17:
            return Role.SELECT
        if epoch < 17 + self.B_id:
            return Role.BIT
        if epoch == 17 + self.B_id:
            return Role.VERIFY
        if epoch == 18 + self.B_id:
            return Role.SAFETY
        raise ValueError(f"epoch {epoch} outside the search plan")


@dataclass
class CrossScratch:
    """Per-node search state, carried across the epochs of one phase."""

    seed_acc: int = 0
    sel: int = 0
    prefix: int = 0
    prefix_len: int = 0
    role: int = Role.IDLE
    is_port: int = 0
    port_target: int | None = None
    echo: int = 0
    child_class: dict[int, int] = field(default_factory=dict)

    def copy(self) -> "CrossScratch":
        c = CrossScratch(self.seed_acc, self.sel, self.prefix, self.prefix_len, self.role,
                         self.is_port, self.port_target, self.echo, dict(self.child_class))
        return c


def on_discovery(cs: CrossScratch, payload: int, phys_edges: dict[int, int], tree_nbrs,
                 B_id: int, width: int) -> None:
    role, data = split_payload(payload)
    cs.role = role
    cs.child_class = {}
    cs.is_port = 0
    cs.port_target = None
    cs.echo = 0
    if role == Role.SEED:
        cs.seed_acc = ((cs.seed_acc << 4) | (data & 0xF)) & MASK64
    elif role == Role.PROBE:
        cs.prefix = cs.prefix_len = 0
        cs.echo = probe_vector(phys_edges.values(), cs.seed_acc, width)
    elif role == Role.SELECT:
        cs.sel = data & 0x7
        cs.prefix = cs.prefix_len = 0
        cs.echo = local_range_parity(phys_edges.values(), 0, 0, B_id,
                                     subsample_seed(cs.seed_acc, cs.sel))
    elif role == Role.BIT:
        if cs.prefix_len < B_id - 1:
            cs.prefix = (cs.prefix << 1) | (data & 1)
            cs.prefix_len += 1
            cs.echo = local_range_parity(phys_edges.values(), cs.prefix, cs.prefix_len, B_id,
                                         subsample_seed(cs.seed_acc, cs.sel))
    elif role == Role.VERIFY:
        if cs.prefix_len == B_id - 1:
            cs.prefix = (cs.prefix << 1) | (data & 1)
            cs.prefix_len += 1
            cs.is_port, cs.port_target = verify_candidate(phys_edges, tree_nbrs, cs.prefix)
        cs.echo = cs.is_port
    elif role == Role.SAFETY:
        if data & 1 and cs.prefix_len == B_id:
            cs.is_port, cs.port_target = verify_candidate(phys_edges, tree_nbrs, cs.prefix)
        cs.echo = cs.is_port


def on_child_echo(cs: CrossScratch, child: int, payload: int) -> None:
    if cs.role in (Role.PROBE, Role.SELECT, Role.BIT):
        cs.echo ^= payload & 0xFF
    elif cs.role in (Role.VERIFY, Role.SAFETY):
        cls = min(2, payload & 0x3)
        cs.child_class[child] = cls
        cs.echo = saturating_add(cs.echo, cls)


def retraction_echo(cs: CrossScratch) -> tuple[int, int | None]:
    """Echo payload sent to the parent, plus out_prop to install (SAFETY only)."""
    if cs.role == Role.SAFETY:
        return safety_retraction(cs.child_class, cs.is_port, cs.port_target)
    return cs.echo & 0xFF, None


@dataclass
class SearchDriver:
    """Root-side state steering the search through the epochs of a phase."""

    seed: int = 0
    failed: int = 0
    sel: int = 0
    bits: int = 0
    nbits: int = 0

    def copy(self) -> "SearchDriver":
        return SearchDriver(self.seed, self.failed, self.sel, self.bits, self.nbits)

    def reset(self, seed: int) -> None:
        self.seed = seed & MASK64
        self.failed = 0
        self.sel = 0
        self.bits = 0
        self.nbits = 0

    def discovery_payload(self, epoch: int, plan: EpochPlan) -> int:
        role = plan.role(epoch)
        if role == Role.SEED:
            return make_payload(Role.SEED, (self.seed >> (60 - 4 * epoch)) & 0xF)
        if role == Role.PROBE:
            return make_payload(Role.PROBE)
        if role == Role.SAFETY:
            return make_payload(Role.SAFETY, 0 if self.failed else 1)
        if self.failed:
            return make_payload(Role.IDLE)
        if role == Role.SELECT:
            return make_payload(Role.SELECT, self.sel)
        return make_payload(role, self.bits & 1)

    def absorb(self, epoch: int, plan: EpochPlan, total: int, width: int) -> None:
        """Consume the tree-wide echo at the end of a search traversal."""
        role = plan.role(epoch)
        if self.failed:
            return
        if role == Role.PROBE:
            vec = total & ((1 << width) - 1)
            if vec == 0:
                self.failed = 1
            else:
                self.sel = (vec & -vec).bit_length() - 1
        elif role in (Role.SELECT, Role.BIT):
            self.bits = (self.bits << 1) | decide_next_bit(total)
            self.nbits += 1
        elif role == Role.VERIFY:
            if total != 1:
                self.failed = 1
