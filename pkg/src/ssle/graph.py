"""Communication graphs with unique edge identifiers and shadow nodes.

Physical nodes are numbered ``0..n-1``.  After augmentation the shadow of
physical node ``v`` is node ``v + n``.  Physical edge IDs live in
``[1, N*N/2)`` and shadow edge IDs in ``[N*N/2, N*N)``; ID 0 means "no edge".
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx

GRAPH_KINDS = ("path", "cycle", "star", "complete", "gnp", "random_tree")


def bound_for(n_phys: int) -> int:
    """Smallest power of two that is at least 4 * n_phys."""
    if n_phys < 1:
        raise ValueError("need at least one physical node")
    N = 1
    while N < 4 * n_phys:
        N *= 2
    return N


@dataclass(frozen=True)
class ScheduleParams:
    """Global constants, all a pure function of N."""

    N: int
    C_tr: int = 8

    def __post_init__(self):
        if self.N < 4 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 4, got {self.N}")
        if self.C_tr <= 2:
            raise ValueError("C_tr must exceed 2")

    @property
    def log_N(self) -> int:
        return self.N.bit_length() - 1

    @property
    def B_id(self) -> int:
        return 2 * self.log_N

    @property
    def S(self) -> int:
        return self.B_id + 19

    @property
    def epoch_len(self) -> int:
        return 2 * self.C_tr * self.N

    @property
    def accept_phase_len(self) -> int:
        return (self.S + 2) * self.epoch_len

    @property
    def propose_wait(self) -> int:
        return 3 * self.C_tr * self.N

    @property
    def tmr_expiry(self) -> int:
        return 8 * self.C_tr * self.N

    @property
    def premature_floor(self) -> int:
        return self.C_tr * self.N

    @property
    def restart_quiet(self) -> int:
        return self.S * self.epoch_len

    @property
    def recovery_round(self) -> int:
        """First round from which no restart or token death may occur."""
        return 26 * self.C_tr * self.N + 1

    @property
    def shadow_id_base(self) -> int:
        return self.N * self.N // 2


@dataclass
class Topology:
    n_phys: int
    N: int
    # adjacency[v] maps neighbor -> edge id
    adjacency: list[dict[int, int]] = field(default_factory=list)

    @property
    def edges(self) -> list[tuple[int, int, int]]:
        return [(u, v, eid) for u, nbrs in enumerate(self.adjacency)
                for v, eid in sorted(nbrs.items()) if u < v]

    def num_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def validate(self) -> None:
        if len(self.adjacency) != self.n_phys:
            raise ValueError("adjacency length differs from n_phys")
        if self.N < 4 * self.n_phys or self.N & (self.N - 1):
            raise ValueError(f"N={self.N} is not a power of two >= 4*n")
        seen = set()
        limit = self.N * self.N // 2
        for u, nbrs in enumerate(self.adjacency):
            for v, eid in nbrs.items():
                if v == u:
                    raise ValueError(f"self loop at {u}")
                if not 0 <= v < self.n_phys:
                    raise ValueError(f"neighbor {v} out of range")
                if self.adjacency[v].get(u) != eid:
                    raise ValueError(f"edge {u}-{v} has inconsistent ids")
                if u < v:
                    if not 1 <= eid < limit:
                        raise ValueError(f"edge id {eid} outside [1, N^2/2)")
                    if eid in seen:
                        raise ValueError(f"duplicate edge id {eid}")
                    seen.add(eid)

    def is_connected(self) -> bool:
        return len(reachable(self.adjacency, 0)) == self.n_phys


def reachable(adjacency, start: int) -> set[int]:
    seen = {start}
    todo = deque([start])
    while todo:
        u = todo.popleft()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


@dataclass
class AugmentedTopology:
    topology: Topology
    adjacency: list[dict[int, int]]

    @property
    def n_phys(self) -> int:
        return self.topology.n_phys

    @property
    def N(self) -> int:
        return self.topology.N

    @property
    def n_aug(self) -> int:
        return 2 * self.topology.n_phys

    def is_shadow(self, x: int) -> bool:
        return x >= self.topology.n_phys

    def partner(self, x: int) -> int:
        n = self.topology.n_phys
        return x - n if x >= n else x + n

    def is_physical_edge(self, u: int, v: int) -> bool:
        n = self.topology.n_phys
        return u < n and v < n

    def physical_edges(self, v: int) -> dict[int, int]:
        if self.is_shadow(v):
            return {}
        return self.topology.adjacency[v]


def _from_nx(g: nx.Graph, n: int, seed) -> Topology:
    adjacency: list[dict[int, int]] = [dict() for _ in range(n)]
    for u, v in g.edges():
        adjacency[u][v] = 0
        adjacency[v][u] = 0
    topo = Topology(n, bound_for(n), adjacency)
    return assign_edge_ids(topo, seed)


def generate(kind: str, n: int, seed: int = 0, p: float = 0.5) -> Topology:
    """Build a connected simple graph of the given kind with fresh edge IDs."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind not in GRAPH_KINDS:
        raise ValueError(f"unknown graph kind {kind!r}")
    rng = random.Random(f"graph:{kind}:{n}:{seed}:{p}")
    if kind == "path" or (kind == "cycle" and n < 3):
        g = nx.path_graph(n)
    elif kind == "cycle":
        g = nx.cycle_graph(n)
    elif kind == "star":
        g = nx.star_graph(n - 1) if n > 1 else nx.empty_graph(1)
    elif kind == "complete":
        g = nx.complete_graph(n)
    elif kind == "random_tree":
        g = _random_tree(n, rng)
    else:
        if not 0 < p <= 1:
            raise ValueError("gnp edge probability must lie in (0, 1]")
        g = None
        for _ in range(50):
            g = nx.gnp_random_graph(n, p, seed=rng.randrange(2**32))
            if nx.is_connected(g):
                break
        else:
            # repair with a random spanning backbone
            order = list(range(n))
            rng.shuffle(order)
            for i in range(1, n):
                g.add_edge(order[i], order[rng.randrange(i)])
    return _from_nx(g, n, rng.randrange(2**63))


def _random_tree(n: int, rng: random.Random) -> nx.Graph:
    if n <= 2:
        return nx.path_graph(n)
    prufer = [rng.randrange(n) for _ in range(n - 2)]
    return nx.from_prufer_sequence(prufer)


def assign_edge_ids(topology: Topology, seed) -> Topology:
    """Give every physical edge a distinct ID drawn uniformly from [1, N^2/2)."""
    rng = random.Random(f"ids:{seed}")
    pairs = [(u, v) for u, nbrs in enumerate(topology.adjacency) for v in sorted(nbrs) if u < v]
    ids = rng.sample(range(1, topology.N * topology.N // 2), len(pairs))
    adjacency: list[dict[int, int]] = [dict() for _ in range(topology.n_phys)]
    for (u, v), eid in zip(pairs, ids):
        adjacency[u][v] = eid
        adjacency[v][u] = eid
    return Topology(topology.n_phys, topology.N, adjacency)


def augment_shadows(topology: Topology) -> AugmentedTopology:
    n, N = topology.n_phys, topology.N
    base = N * N // 2
    adjacency = [dict(nbrs) for nbrs in topology.adjacency] + [dict() for _ in range(n)]
    for v in range(n):
        adjacency[v][v + n] = base + v
        adjacency[v + n][v] = base + v
    return AugmentedTopology(topology, adjacency)


def read_edge_list(path: str | Path) -> Topology:
    """Parse ``u v edge_id`` lines (0-based node indices, '#' comments)."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'u v edge_id'")
        edges.append(tuple(int(x) for x in parts))
    if not edges:
        raise ValueError(f"{path}: no edges")
    n = max(max(u, v) for u, v, _ in edges) + 1
    adjacency: list[dict[int, int]] = [dict() for _ in range(n)]
    for u, v, eid in edges:
        if v in adjacency[u]:
            raise ValueError(f"parallel edge {u}-{v}")
        adjacency[u][v] = eid
        adjacency[v][u] = eid
    topo = Topology(n, bound_for(n), adjacency)
    topo.validate()
    if not topo.is_connected():
        raise ValueError(f"{path}: graph is disconnected")
    return topo


def write_edge_list(topology: Topology, path: str | Path) -> None:
    lines = [f"{u} {v} {eid}" for u, v, eid in topology.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_config_text(text: str) -> dict[str, str]:
    """Read ``key = value`` lines; blank lines and '#' comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def topology_from_config(cfg: dict[str, str]) -> Topology:
    """Accepts either plain keys (kind, n, p, seed) or ``graph.``-prefixed ones."""
    def get(key, default=None):
        return cfg.get(f"graph.{key}", cfg.get(key, default))

    if get("edges"):
        return read_edge_list(get("edges"))
    kind = get("kind")
    if kind is None:
        raise ValueError("config lacks graph kind")
    return generate(kind, int(get("n", 0)), int(get("seed", 0)), float(get("p", 0.5)))
