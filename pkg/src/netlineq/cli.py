"""Command-line entry point: ``netlineq {run,analyze,balance,validate,batch}``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .graph import GraphError, balance_by_head_scaling, is_weight_balanced, load_graph, save_graph
from .harness import (
    ConfigError,
    format_report,
    hypothesis_issues,
    load_config,
    run_experiment,
    spectral_report,
)
from .kernels import DivergenceError
from .linproblem import ProblemError


def _default_out(config_path: str) -> Path:
    return Path(Path(config_path).stem + ".csv")


def _run_one(config_path: str, out: str | None = None) -> dict:
    cfg = load_config(config_path)
    target = Path(out) if out else (cfg.output or _default_out(config_path))
    _, summary = run_experiment(cfg, out=target)
    return summary


def cmd_run(args) -> int:
    summary = _run_one(args.config, args.out)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_batch(args) -> int:
    # each config owns its output file and random streams
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        summaries = list(pool.map(_run_one, args.configs))
    print(json.dumps(summaries, indent=2))
    return 0


def cmd_analyze(args) -> int:
    report = spectral_report(load_config(args.config))
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(format_report(report))
        print(json.dumps({k: report.get(k) for k in (
            "lambda2_LLt", "lambda2_Q11", "gamma_bar", "central_rate_bound", "nullspace_condition")}))
    return 0


def cmd_balance(args) -> int:
    g = load_graph(args.graph)
    gb = balance_by_head_scaling(g)
    save_graph(gb, args.out)
    print(f"wrote {args.out} (balanced: {is_weight_balanced(gb)})")
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, GraphError, ProblemError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    issues = hypothesis_issues(cfg)
    for issue in issues:
        print(f"hypothesis: {issue}", file=sys.stderr)
    if not issues:
        print("ok")
    return 1 if issues else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netlineq", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a config and write a CSV trace")
    p.add_argument("config")
    p.add_argument("--out", help="CSV path (default: config 'output' or <config>.csv)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run several configs concurrently")
    p.add_argument("configs", nargs="+")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("analyze", help="spectral report without simulation")
    p.add_argument("config")
    p.add_argument("--json", action="store_true", help="print only the full JSON report")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("balance", help="balance a graph by head scaling")
    p.add_argument("graph")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("validate", help="schema and hypothesis checks")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except (ConfigError, GraphError, ProblemError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
