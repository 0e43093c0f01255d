"""Command line entry point: ``python -m mapf_fico {run,reduction,report} ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

from .benchmark import (
    ALGOS,
    COLUMNS,
    MODES,
    TIMING_COLUMNS,
    ConfigError,
    RunConfig,
    report_agent_reduction,
    run_benchmark,
    summarize_reduction,
)

REDUCTION_COLUMNS = ["map", "mode", "agents", "seed", "horizon", "steps", "cf_fraction"]


def parse_int_list(text: str) -> list[int]:
    """'0-4' -> [0..4]; '1,5,9' -> [1, 5, 9]; ranges and commas combine."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _prob(text: str) -> float:
    p = float(text)
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError("probability must lie in [0, 1]")
    return p


def _add_common(p: argparse.ArgumentParser, agents_list: bool = False) -> None:
    p.add_argument("--map", default="random-64-64-10",
                   help="MovingAI .map path or builtin name (empty-8-8, empty-16-16, empty-48-48, random-64-64-10)")
    p.add_argument("--scen", default=None, help="MovingAI .scen path; synthetic instances when omitted")
    if agents_list:
        p.add_argument("--agents", type=parse_int_list, default=[100], help="agent counts, e.g. 100,400")
    else:
        p.add_argument("--agents", type=int, default=100)
    p.add_argument("--mode", choices=MODES, default="one-shot")
    p.add_argument("--horizon", type=int, default=3)
    p.add_argument("--d", type=int, default=10, help="agents added per congestion-resolution round")
    p.add_argument("--hindrance", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--balanced", action=argparse.BooleanOptionalAction, default=True,
                   help="path-count weighted tie-breaking (off: uniform)")
    p.add_argument("--p-delay", type=_prob, default=0.0)
    p.add_argument("--p-add", type=_prob, default=0.0)
    p.add_argument("--t-max", type=int, default=None)
    p.add_argument("--budget", type=float, default=60.0, help="virtual seconds in item-budget mode")
    p.add_argument("--step-cost", type=float, default=2.0, help="virtual seconds per executed step")
    p.add_argument("--seeds", type=parse_int_list, default=[0])
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mapf_fico", description="FICO / PIBT benchmark harness")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="seed sweep, one row per (seed, algo)")
    _add_common(run)
    run.add_argument("--algo", default="fico,pibt", help="comma list of fico, pibt")
    run.add_argument("--timing", action="store_true", help="add wall-clock columns (not reproducible)")
    run.add_argument("--no-validate", dest="validate", action="store_false")
    run.add_argument("--trace-dir", default=None, help="write JSON-lines traces per run here")

    red = sub.add_parser("reduction", help="conflict-free fraction of the first-level split per density")
    _add_common(red, agents_list=True)

    rep = sub.add_parser("report", help="sweep agent counts and render figures next to the CSV")
    _add_common(rep, agents_list=True)
    rep.add_argument("--algo", default="fico,pibt")
    rep.add_argument("--out-dir", default="report")
    return ap


def _config(args, agents: int) -> RunConfig:
    algos = tuple(a.strip() for a in getattr(args, "algo", "fico").split(",") if a.strip())
    for a in algos:
        if a not in ALGOS:
            raise ConfigError(f"unknown algo {a!r}")
    return RunConfig(
        map=args.map, scen=args.scen, agents=agents, mode=args.mode, algos=algos,
        horizon=args.horizon, d=args.d, hindrance=args.hindrance, balanced=args.balanced,
        p_delay=args.p_delay, p_add=args.p_add, t_max=args.t_max, seeds=tuple(args.seeds),
        threads=args.threads, budget_s=args.budget, step_cost_s=args.step_cost,
        timing=getattr(args, "timing", False), validate=getattr(args, "validate", True),
    )


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(rows: list[dict], columns: list[str], fmt: str, fh) -> None:
    if fmt == "csv":
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})
    else:
        for r in rows:
            fh.write(json.dumps({k: r.get(k) for k in columns}) + "\n")


def _emit(rows, columns, args) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_rows(rows, columns, args.format, fh)
    else:
        buf = io.StringIO()
        write_rows(rows, columns, args.format, buf)
        sys.stdout.write(buf.getvalue())


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config(args, args.agents)
            rows = run_benchmark(cfg, trace_dir=args.trace_dir)
            _emit(rows, COLUMNS + (TIMING_COLUMNS if cfg.timing else []), args)
        elif args.command == "reduction":
            cfg = _config(args, args.agents[0])
            rows = report_agent_reduction(cfg, args.agents)
            _emit(rows, REDUCTION_COLUMNS, args)
        else:
            from .plotting import render_report

            os.makedirs(args.out_dir, exist_ok=True)
            rows = []
            for n in args.agents:
                cfg = _config(args, n)
                cfg.timing = True
                rows.extend(run_benchmark(cfg))
            with open(os.path.join(args.out_dir, "results.csv"), "w", encoding="utf-8", newline="") as fh:
                write_rows(rows, COLUMNS + TIMING_COLUMNS, "csv", fh)
            red = report_agent_reduction(_config(args, args.agents[0]), args.agents)
            with open(os.path.join(args.out_dir, "reduction.csv"), "w", encoding="utf-8", newline="") as fh:
                write_rows(red, REDUCTION_COLUMNS, "csv", fh)
            for path in render_report(rows, summarize_reduction(red), args.out_dir):
                print(path)
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0
