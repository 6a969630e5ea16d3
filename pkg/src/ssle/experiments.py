"""Batch experiments: run grids of configurations, aggregate oracle verdicts, write CSV."""
from __future__ import annotations

import csv
import logging
import math
import multiprocessing as mp
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crossing
from . import oracle
from . import trace as tr
from .graph import GRAPH_KINDS, Topology, assign_edge_ids, augment_shadows, bound_for, parse_config_text
from .node import PROPOSE, fresh_restart_state
from .sim import N_PRESETS, STRATEGIES, RunConfig, World, _tree_states, run

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ("kind", "n", "N", "strategy", "seed", "stabilization_round", "bound", "within_bound",
                  "cap_exceeded", "last_round", "msgs_pre", "msgs_post_per_round_max", "restarts",
                  "tokens", "verdicts", "failed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    kind: str
    n: int
    p: float = 0.5

    def label(self) -> str:
        return f"{self.kind}:{self.n}" + (f":{self.p:g}" if self.kind == "gnp" else "")


@dataclass(frozen=True)
class AdversarySpec:
    strategy: str
    preset: int = 0

    def label(self) -> str:
        return f"hostile:{self.preset}" if self.strategy == "hostile" else self.strategy


@dataclass
class ExperimentConfig:
    graphs: list[GraphSpec] = field(default_factory=list)
    adversaries: list[AdversarySpec] = field(default_factory=list)
    seeds: range = field(default_factory=lambda: range(0))
    max_rounds: int | None = None
    out: Path | None = None
    cadence: int | None = None
    traces: bool = True
    jobs: int = 1
    quiet: bool = False

    def validate(self) -> None:
        if len(self.seeds) == 0:
            raise ConfigError("seed range is empty")
        if not self.graphs:
            raise ConfigError("no graph given")
        if not self.adversaries:
            raise ConfigError("no adversary given")
        if self.max_rounds is not None and self.max_rounds <= 0:
            raise ConfigError("round cap must be positive")
        if self.cadence is not None and self.cadence <= 0:
            raise ConfigError("oracle cadence must be positive")

    def tasks(self) -> list[dict]:
        return [dict(kind=g.kind, n=g.n, p=g.p, strategy=a.strategy, preset=a.preset, seed=s,
                     max_rounds=self.max_rounds, cadence=self.cadence)
                for g in self.graphs for a in self.adversaries for s in self.seeds]


# ----------------------------------------------------------------- parsing
def parse_seeds(text: str) -> range:
    """``A..B`` (inclusive) or a single seed."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            return range(int(a), int(b) + 1)
        s = int(text)
        return range(s, s + 1)
    except ValueError as exc:
        raise ConfigError(f"bad seed range {text!r}") from exc


def parse_graph(text: str) -> GraphSpec:
    parts = text.split(":")
    if len(parts) not in (2, 3) or parts[0] not in GRAPH_KINDS:
        raise ConfigError(f"bad graph argument {text!r}; expected KIND:N[:P] with KIND in {GRAPH_KINDS}")
    try:
        n = int(parts[1])
        p = float(parts[2]) if len(parts) == 3 else 0.5
    except ValueError as exc:
        raise ConfigError(f"bad graph argument {text!r}") from exc
    if n < 1:
        raise ConfigError("graph needs at least one node")
    if not 0 < p <= 1:
        raise ConfigError("edge probability must lie in (0, 1]")
    return GraphSpec(parts[0], n, p)


def parse_adversary(text: str) -> list[AdversarySpec]:
    """``clean``, ``random``, ``hostile:K``, ``hostile`` (every preset) or ``all``."""
    name, _, k = text.partition(":")
    if name == "all" and not k:
        return [AdversarySpec("clean"), AdversarySpec("random")] + parse_adversary("hostile")
    if name not in STRATEGIES:
        raise ConfigError(f"unknown adversary {text!r}")
    if name != "hostile":
        if k:
            raise ConfigError(f"{name} takes no preset")
        return [AdversarySpec(name)]
    if not k:
        return [AdversarySpec("hostile", i) for i in range(N_PRESETS)]
    try:
        i = int(k)
    except ValueError as exc:
        raise ConfigError(f"bad preset in {text!r}") from exc
    if not 0 <= i < N_PRESETS:
        raise ConfigError(f"hostile preset must lie in 0..{N_PRESETS - 1}")
    return [AdversarySpec("hostile", i)]


def _split_list(value: str) -> list[str]:
    return [x for x in value.replace(",", " ").split() if x]


def config_from_text(text: str) -> ExperimentConfig:
    """Config file keys: graphs, adversaries, seeds, max_rounds, out, oracle_cadence, traces, jobs, quiet.

    ``graphs`` and ``adversaries`` take comma or space separated lists in the
    flag syntax, e.g. ``graphs = path:4, gnp:8:0.3``.
    """
    kv = parse_config_text(text)
    known = {"graphs", "adversaries", "seeds", "max_rounds", "out", "oracle_cadence", "traces",
             "jobs", "quiet"}
    unknown = set(kv) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = ExperimentConfig()
    cfg.graphs = [parse_graph(g) for g in _split_list(kv.get("graphs", ""))]
    cfg.adversaries = [a for x in _split_list(kv.get("adversaries", "clean")) for a in parse_adversary(x)]
    cfg.seeds = parse_seeds(kv.get("seeds", "0"))
    if "max_rounds" in kv:
        cfg.max_rounds = int(kv["max_rounds"])
    if "out" in kv:
        cfg.out = Path(kv["out"])
    if "oracle_cadence" in kv:
        cfg.cadence = int(kv["oracle_cadence"])
    cfg.traces = kv.get("traces", "true").lower() in ("1", "true", "yes")
    cfg.jobs = int(kv.get("jobs", "1"))
    cfg.quiet = kv.get("quiet", "false").lower() in ("1", "true", "yes")
    return cfg


# ----------------------------------------------------------------- running
def stabilization_bound(N: int) -> int:
    lg = N.bit_length() - 1
    return 500 * N * lg * lg


def summarize(trace: tr.Trace, report: oracle.TraceReport, kind: str) -> dict:
    n = trace.n_phys
    stab = trace.stabilization_round
    post_max = 0
    if stab is not None:
        rounds = [r for r, s, d in zip(trace.msg_round, trace.msg_src, trace.msg_dst)
                  if s < n and d < n and r >= stab]
        if rounds:
            post_max = max(np.unique(np.asarray(rounds), return_counts=True)[1])
    bound = stabilization_bound(trace.N)
    return {
        "kind": kind,
        "n": n,
        "N": trace.N,
        "strategy": trace.strategy,
        "seed": trace.seed,
        "stabilization_round": stab if stab is not None else "",
        "bound": bound,
        "within_bound": int(stab is not None and stab <= bound),
        "cap_exceeded": int(trace.cap_exceeded),
        "last_round": trace.last_round,
        "msgs_pre": trace.physical_message_count(0, stab),
        "msgs_post_per_round_max": int(post_max),
        "restarts": sum(trace.restart_counts().values()),
        "tokens": len(trace.tokens),
        "verdicts": report.bits(),
        "failed": " ".join(report.failed()),
    }


def run_task(task: dict, trace_dir: str | None = None) -> dict:
    cfg = RunConfig(kind=task["kind"], n=task["n"], p=task["p"], strategy=task["strategy"],
                    preset=task["preset"], seed=task["seed"], max_rounds=task["max_rounds"],
                    cadence=task["cadence"])
    res = run(cfg)
    report = oracle.check_trace(res.trace, res.params)
    row = summarize(res.trace, report, task["kind"])
    if trace_dir is not None:
        name = f"{task['kind']}_{task['n']}_{row['strategy'].replace(':', '')}_{task['seed']}.jsonl"
        res.trace.write_jsonl(Path(trace_dir) / name)
    return row


def _run_task_star(args):
    return run_task(*args)


def run_suite(config: ExperimentConfig) -> tuple[list[dict], dict]:
    """Run every (graph, adversary, seed) task; write CSVs when ``config.out`` is set.

    Returns the per-run rows and the aggregate record.
    """
    config.validate()
    tasks = config.tasks()
    trace_dir = None
    if config.out is not None:
        config.out.mkdir(parents=True, exist_ok=True)
        if config.traces:
            trace_dir = config.out / "runs"
            trace_dir.mkdir(exist_ok=True)
    args = [(t, str(trace_dir) if trace_dir else None) for t in tasks]
    jobs = max(1, config.jobs)
    if jobs == 1 or len(tasks) == 1:
        rows = []
        for i, a in enumerate(args):
            rows.append(run_task(*a))
            if not config.quiet:
                log.info("run %d/%d %s", i + 1, len(args), _row_brief(rows[-1]))
    else:
        with mp.get_context("spawn").Pool(jobs) as pool:
            rows = list(pool.imap(_run_task_star, args, chunksize=1))
    agg = aggregate(rows)
    if config.out is not None:
        write_rows(rows, config.out / "summary.csv")
        write_aggregate(agg, config.out)
    return rows, agg


def _row_brief(row: dict) -> str:
    return (f"{row['kind']}:{row['n']} {row['strategy']} seed={row['seed']} "
            f"stab={row['stabilization_round']} verdicts={row['verdicts']}")


def write_rows(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def hard_failure(row: dict) -> bool:
    return bool(row["failed"]) or bool(row["cap_exceeded"])


def aggregate(rows: list[dict]) -> dict:
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["kind"], r["n"], r["strategy"]), []).append(r)
    table = []
    for (kind, n, strategy), rs in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0], kv[0][2])):
        stabs = [r["stabilization_round"] for r in rs if r["stabilization_round"] != ""]
        table.append({
            "kind": kind, "n": n, "N": rs[0]["N"], "strategy": strategy, "runs": len(rs),
            "within_bound_rate": sum(r["within_bound"] for r in rs) / len(rs),
            "median_stab": statistics.median(stabs) if stabs else "",
            "p95_stab": float(np.percentile(stabs, 95)) if stabs else "",
            "mean_msgs_pre": sum(r["msgs_pre"] for r in rs) / len(rs),
            "max_msgs_post_per_round": max(r["msgs_post_per_round_max"] for r in rs),
            "restarts": sum(r["restarts"] for r in rs),
            "verdict_pass_rate": sum(not r["failed"] for r in rs) / len(rs),
            "cap_exceeded": sum(r["cap_exceeded"] for r in rs),
        })
    return {"cells": table, "scaling": scaling(rows), "runs": len(rows),
            "hard_failures": sum(hard_failure(r) for r in rows)}


def scaling(rows: list[dict]) -> dict:
    """Medians per N of stabilization round and pre-stabilization messages, normalized by N log^2 N.

    ``slope`` is the least-squares exponent of median stabilization round
    against N log^2 N on a log-log scale (1 means proportional growth).
    """
    by_N: dict[int, list[dict]] = {}
    for r in rows:
        if r["stabilization_round"] != "":
            by_N.setdefault(r["N"], []).append(r)
    out = {"N": [], "median_stab": [], "c_stab": [], "median_msgs": [], "c_msgs": [], "slope": None,
           "msg_slope": None}
    for N in sorted(by_N):
        f = N * math.log2(N) ** 2
        ms = statistics.median(r["stabilization_round"] for r in by_N[N])
        mm = statistics.median(r["msgs_pre"] for r in by_N[N])
        out["N"].append(N)
        out["median_stab"].append(ms)
        out["c_stab"].append(ms / f)
        out["median_msgs"].append(mm)
        out["c_msgs"].append(mm / f)
    if len(out["N"]) >= 2:
        x = np.log([N * math.log2(N) ** 2 for N in out["N"]])
        out["slope"] = float(np.polyfit(x, np.log(np.maximum(out["median_stab"], 1)), 1)[0])
        out["msg_slope"] = float(np.polyfit(x, np.log(np.maximum(out["median_msgs"], 1)), 1)[0])
    return out


def write_aggregate(agg: dict, out: Path) -> None:
    cells = agg["cells"]
    if cells:
        with open(out / "aggregate.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(cells[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(cells)
    sc = agg["scaling"]
    with open(out / "scaling.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "median_stab", "c_stab", "median_msgs", "c_msgs"])
        for row in zip(sc["N"], sc["median_stab"], sc["c_stab"], sc["median_msgs"], sc["c_msgs"]):
            w.writerow(row)
    (out / "report.txt").write_text(render_report(agg))


def render_report(agg: dict) -> str:
    lines = [f"runs: {agg['runs']}  hard failures: {agg['hard_failures']}", ""]
    lines.append(f"{'cell':<34}{'runs':>6}{'in bound':>10}{'median':>12}{'p95':>12}{'msgs':>10}{'pass':>7}")
    for c in agg["cells"]:
        label = f"{c['kind']}:{c['n']} {c['strategy']}"
        med = f"{c['median_stab']:.0f}" if c["median_stab"] != "" else "-"
        p95 = f"{c['p95_stab']:.0f}" if c["p95_stab"] != "" else "-"
        lines.append(f"{label:<34}{c['runs']:>6}{c['within_bound_rate']:>10.2f}{med:>12}{p95:>12}"
                     f"{c['mean_msgs_pre']:>10.0f}{c['verdict_pass_rate']:>7.2f}")
    sc = agg["scaling"]
    lines.append("")
    lines.append("N       median_stab  /(N log^2 N)  median_msgs  /(N log^2 N)")
    for N, ms, cs, mm, cm in zip(sc["N"], sc["median_stab"], sc["c_stab"], sc["median_msgs"], sc["c_msgs"]):
        lines.append(f"{N:<8}{ms:>11.0f}{cs:>14.2f}{mm:>13.0f}{cm:>14.3f}")
    if sc["slope"] is not None:
        lines.append(f"log-log slope vs N log^2 N: rounds {sc['slope']:.3f}, messages {sc['msg_slope']:.3f}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------- crossing search bench
@dataclass
class TreeFixture:
    """A topology plus a parent map describing one tree over a subset of its nodes."""

    name: str
    topology: Topology
    parent: dict[int, int | None]

    @property
    def root(self) -> int:
        return next(v for v, p in self.parent.items() if p is None)

    def crossing(self) -> set[int]:
        return oracle.brute_force_crossing_edges(self.topology, set(self.parent))


def _fixture(name: str, n: int, edges, parent, seed: int) -> TreeFixture:
    adjacency: list[dict[int, int]] = [dict() for _ in range(n)]
    for u, v in edges:
        adjacency[u][v] = adjacency[v][u] = 0
    topo = assign_edge_ids(Topology(n, bound_for(n), adjacency), f"fixture:{name}:{seed}")
    return TreeFixture(name, topo, parent)


def standard_fixtures() -> list[TreeFixture]:
    path = [(i, i + 1) for i in range(5)]
    chain = {0: None, 1: 0, 2: 1}
    eight_edges = [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7),
                   (0, 4), (1, 4), (1, 5), (2, 5), (2, 6), (3, 6), (3, 7), (0, 7)]
    rng = random.Random("fixture:random")
    rnd_edges = {(i, rng.randrange(i)) for i in range(1, 12)}
    rnd_edges |= {(u, v) for u in range(12) for v in range(u) if rng.random() < 0.25}
    inside = {0: None}
    for u, v in sorted(rnd_edges, key=lambda e: (max(e), min(e))):
        a, b = max(u, v), min(u, v)
        if b in inside and a not in inside and a < 6:
            inside[a] = b
    return [
        _fixture("none", 4, [(0, 1), (1, 2), (2, 3)], {0: None, 1: 0, 2: 1, 3: 2}, 0),
        _fixture("one", 6, path, chain, 0),
        _fixture("eight", 8, eight_edges, {0: None, 1: 0, 2: 1, 3: 2}, 0),
        _fixture("random", 12, sorted(rnd_edges), inside, 0),
    ]


@dataclass
class PhaseOutcome:
    found: bool          # a single crossing port was marked
    genuine: bool        # the marked edge really crosses the tree
    edge: int | None
    op2_ok: bool


def run_search_phase(fx: TreeFixture, seed: int, probe_width: int = crossing.DEFAULT_PROBE_WIDTH,
                     ) -> PhaseOutcome:
    """Drive one propose phase of the fixture tree's root through its safety epoch."""
    aug = augment_shadows(fx.topology)
    world = World(aug, seed=seed, probe_width=probe_width, cadence=10**9, strategy="findany")
    params = world.params
    rng = random.Random(f"findany:{fx.name}:{seed}")
    tree = _tree_states(aug, params, fx.parent, rng)
    n = aug.n_phys
    root = fx.root
    for v in range(n):
        if v in fx.parent:
            s = tree[v]
            s.tmr = params.premature_floor
            tree[v + n].tmr = params.premature_floor
            world.nodes[v].st, world.nodes[v + n].st = s, tree[v + n]
        else:
            world.nodes[v].st, world.nodes[v + n].st = fresh_restart_state(v, aug, params)
            world.nodes[v].st.round_in_epoch = 1  # stay quiet for one epoch
    rs = world.nodes[root].st
    rs.tkn, rs.hot, rs.recent = 1, 0, 0
    rs.tkn_d = rs.chld[-1]
    rs.phase_kind, rs.epoch_idx, rs.round_in_epoch = PROPOSE, 0, 0
    rs.driver.reset(rng.getrandbits(64))
    world.start()
    trace = world.trace
    seen = 0
    while True:
        world.step()
        ev = trace.events
        hit = [e for e in ev[seen:] if e[2] == tr.SAFETY and e[1] == root]
        seen = len(ev)
        if hit:
            break
        if world.now > params.S * params.epoch_len + 1:
            raise RuntimeError("search phase did not reach its safety epoch")
    cls = hit[0][3]
    states = world.states()
    op2_ok = not trace.of_kind(tr.VIOLATION)
    if cls != 1 or states[root].out_prop is None:
        return PhaseOutcome(False, False, None, op2_ok)
    # follow the marked path to the port
    v = root
    for _ in range(n + 1):
        w = states[v].out_prop
        if w is None or w not in fx.parent:
            break
        v = w
    w = states[v].out_prop
    eid = fx.topology.adjacency[v].get(w) if w is not None else None
    genuine = eid is not None and eid in fx.crossing()
    return PhaseOutcome(True, genuine, eid, op2_ok and oracle.out_prop_path_ok(states, root))


def findany_bench(fixtures: list[TreeFixture] | None = None, phases: int = 1000, seed: int = 0,
                  probe_width: int = crossing.DEFAULT_PROBE_WIDTH) -> list[dict]:
    """Per-fixture success rates of the crossing-edge search over independent phases."""
    rows = []
    for fx in fixtures or standard_fixtures():
        k = len(fx.crossing())
        found = genuine = op2 = 0
        for i in range(phases):
            o = run_search_phase(fx, seed * 1_000_003 + i, probe_width)
            found += o.found
            genuine += o.genuine
            op2 += o.op2_ok
        rows.append({
            "fixture": fx.name, "tree_size": len(fx.parent), "crossing_edges": k,
            "phases": phases, "probe_width": probe_width,
            "found": found, "genuine": genuine, "unsound": found - genuine,
            "success_rate": (genuine if k else phases - found) / phases,
            "op2_ok": op2,
        })
    return rows


def write_findany(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

