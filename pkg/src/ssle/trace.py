"""Event trace and token ledger records produced by a simulation run."""
from __future__ import annotations

import json
from array import array
from dataclasses import dataclass, field
from pathlib import Path

# event kinds
BIRTH = "birth"
MOVE = "move"
DEATH = "death"
RESTART = "restart"
INIT = "init"
DONE = "done"
MERGE = "merge"
PHASE = "phase"
ACCPT = "accpt"
SAFETY = "safety"
PROPOSE = "propose"
TRANSFER = "transfer"
VIOLATION = "violation"

DEATH_CAUSES = ("ignored_dispatch", "restart_overwrite", "dissolved")


@dataclass
class TokenRecord:
    tid: int
    birth_round: int
    birth_node: int
    birth_cause: str
    hot_at_birth: bool
    death_round: int | None = None
    death_cause: str | None = None
    death_node: int | None = None

    @property
    def alive(self) -> bool:
        return self.death_round is None


@dataclass
class Trace:
    """Everything needed to re-check a run offline.

    Non-message events are ``(round, node, kind, a, b)`` tuples.  Messages are
    kept in parallel arrays since they dominate the volume.
    """

    n_phys: int
    N: int
    seed: int = 0
    strategy: str = "clean"
    edges: list[tuple[int, int, int]] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)
    msg_round: array = field(default_factory=lambda: array("q"))
    msg_src: array = field(default_factory=lambda: array("i"))
    msg_dst: array = field(default_factory=lambda: array("i"))
    msg_word: array = field(default_factory=lambda: array("Q"))
    tokens: dict[int, TokenRecord] = field(default_factory=dict)
    stabilization_round: int | None = None
    cap_exceeded: bool = False
    last_round: int = -1
    final_tree: list[tuple[int, int]] = field(default_factory=list)

    def add(self, round_: int, node: int, kind: str, a=None, b=None) -> None:
        self.events.append((round_, node, kind, a, b))

    def add_message(self, round_: int, src: int, dst: int, word: int) -> None:
        self.msg_round.append(round_)
        self.msg_src.append(src)
        self.msg_dst.append(dst)
        self.msg_word.append(word)

    def of_kind(self, kind: str):
        return [e for e in self.events if e[2] == kind]

    @property
    def n_messages(self) -> int:
        return len(self.msg_round)

    def is_internal(self, src: int, dst: int) -> bool:
        return src >= self.n_phys or dst >= self.n_phys

    def physical_message_count(self, lo: int = 0, hi: int | None = None) -> int:
        n = self.n_phys
        cnt = 0
        for r, s, d in zip(self.msg_round, self.msg_src, self.msg_dst):
            if s < n and d < n and r >= lo and (hi is None or r < hi):
                cnt += 1
        return cnt

    def restart_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.events:
            if e[2] == RESTART:
                out[e[1]] = out.get(e[1], 0) + 1
        return out

    def records(self):
        """All events as dicts ordered by (round, node)."""
        rows = []
        names = {
            BIRTH: ("token", "cause"), MOVE: ("token", "src"), DEATH: ("token", "cause"),
            RESTART: ("cause", None), INIT: ("token", "epoch_kind"), DONE: ("token", None),
            MERGE: ("acceptor", None), PHASE: ("phase_kind", None), ACCPT: ("value", None),
            SAFETY: ("port_class", None), PROPOSE: ("target", None), TRANSFER: (None, None),
            VIOLATION: ("check", "detail"),
        }
        for i, (r, node, kind, a, b) in enumerate(self.events):
            row = {"round": r, "node": node, "event": kind}
            ka, kb = names.get(kind, ("a", "b"))
            if ka is not None:
                row[ka] = a
            if kb is not None:
                row[kb] = b
            rows.append((r, node, 1, i, row))
        for i, (r, s, d, w) in enumerate(zip(self.msg_round, self.msg_src, self.msg_dst, self.msg_word)):
            rows.append((r, s, 0, i, {"round": r, "node": s, "event": "msg", "dst": d,
                                      "kind": w & 3, "word": w, "bits": 32,
                                      "internal": self.is_internal(s, d)}))
        rows.sort(key=lambda x: x[:4])
        return [row for *_, row in rows]

    def summary(self) -> dict:
        pre = self.physical_message_count(0, self.stabilization_round) \
            if self.stabilization_round is not None else self.physical_message_count()
        return {
            "event": "summary",
            "n": self.n_phys,
            "N": self.N,
            "seed": self.seed,
            "strategy": self.strategy,
            "stabilization_round": self.stabilization_round,
            "cap_exceeded": self.cap_exceeded,
            "last_round": self.last_round,
            "msgs_pre": pre,
            "restarts": sum(self.restart_counts().values()),
            "tokens": len(self.tokens),
        }

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for row in self.records():
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")
            fh.write(json.dumps(self.summary(), separators=(",", ":")) + "\n")
