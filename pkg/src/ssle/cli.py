"""Command line entry point for batch experiments."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ssle-experiment",
        description="Run self-stabilizing leader election experiments and write CSV summaries.")
    p.add_argument("--config", type=Path, help="plain-text config file (key = value lines)")
    p.add_argument("--seeds", help="seed range A..B, inclusive (default 0..9)")
    p.add_argument("--graph", action="append", default=None, metavar="KIND:N[:P]",
                   help="graph to run on; repeatable")
    p.add_argument("--adversary", action="append", default=None, metavar="STRATEGY[:K]",
                   help="clean, random, hostile:K, hostile (all presets) or all; repeatable")
    p.add_argument("--max-rounds", type=int, help="round cap per run")
    p.add_argument("--out", type=Path, help="output directory (default ./results)")
    p.add_argument("--oracle-cadence", type=int, help="rounds between structural snapshot checks")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--no-traces", action="store_true", help="skip per-run event logs")
    p.add_argument("--findany", type=int, metavar="PHASES",
                   help="run the crossing-edge search bench instead of a suite")
    p.add_argument("--probe-width", type=int, default=None, help="sub-samples per search probe")
    p.add_argument("--quiet", action="store_true")
    return p


def config_from_args(args) -> ex.ExperimentConfig:
    cfg = ex.config_from_text(args.config.read_text()) if args.config else ex.ExperimentConfig()
    if args.config is None:
        cfg.seeds = range(10)
        cfg.out = Path("results")
    if args.seeds is not None:
        cfg.seeds = ex.parse_seeds(args.seeds)
    if args.graph:
        cfg.graphs = [ex.parse_graph(g) for g in args.graph]
    if args.adversary:
        cfg.adversaries = [a for x in args.adversary for a in ex.parse_adversary(x)]
    elif not cfg.adversaries:
        cfg.adversaries = [ex.AdversarySpec("clean")]
    if args.max_rounds is not None:
        cfg.max_rounds = args.max_rounds
    if args.out is not None:
        cfg.out = args.out
    if cfg.out is None:
        cfg.out = Path("results")
    if args.oracle_cadence is not None:
        cfg.cadence = args.oracle_cadence
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.no_traces:
        cfg.traces = False
    cfg.quiet = cfg.quiet or args.quiet
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.findany is not None:
        out = args.out or Path("results")
        out.mkdir(parents=True, exist_ok=True)
        kw = {} if args.probe_width is None else {"probe_width": args.probe_width}
        seed = ex.parse_seeds(args.seeds)[0] if args.seeds else 0
        rows = ex.findany_bench(phases=args.findany, seed=seed, **kw)
        ex.write_findany(rows, out / "findany.csv")
        if not args.quiet:
            for r in rows:
                print(f"{r['fixture']:<8} crossing={r['crossing_edges']:<3} "
                      f"success={r['success_rate']:.3f} unsound={r['unsound']}")
        return 1 if any(r["unsound"] or r["op2_ok"] != r["phases"] for r in rows) else 0
    try:
        cfg = config_from_args(args)
    except (ex.ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rows, agg = ex.run_suite(cfg)
    if not cfg.quiet:
        print(ex.render_report(agg), end="")
    return 1 if agg["hard_failures"] else 0


if __name__ == "__main__":
    sys.exit(main())
