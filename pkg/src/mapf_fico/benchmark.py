"""Seed sweeps over (controller, actuator, environment) configurations."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid_world import GridGraph, build_graph, load_map, parse_scenario, random_scenario
from .planners import FicoController, PibtController, PlannerConfig, warmup
from .simulator import (
    ALL_AT_GOAL,
    BUDGET,
    T_MAX,
    ExecutionTrace,
    Termination,
    compute_metrics,
    export_trace,
    run_closed_loop,
    validate_trace,
)
from .system_model import DelayActuator, Environment, GoalStreams, Instance, PerfectActuator

MODES = ("one-shot", "lifelong", "item-budget")
ALGOS = ("fico", "pibt")

COLUMNS = [
    "map", "scen", "mode", "algo", "agents", "seed", "horizon", "d", "hindrance", "balanced",
    "p_delay", "p_add", "t_max", "steps", "termination", "complete", "makespan", "soc",
    "delta_soc", "throughput", "goals_reached", "items_delivered", "final_agents",
    "mean_cf_fraction", "violations",
]
TIMING_COLUMNS = ["ert_s", "mean_plan_s", "max_plan_s", "total_plan_s"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    map: str = "random-64-64-10"
    scen: str | None = None
    agents: int = 100
    mode: str = "one-shot"
    algos: tuple[str, ...] = ALGOS
    horizon: int = 3
    d: int = 10
    hindrance: bool = True
    balanced: bool = True
    p_delay: float = 0.0
    p_add: float = 0.0
    t_max: int | None = None
    seeds: tuple[int, ...] = (0,)
    threads: int = 1
    budget_s: float = 60.0
    step_cost_s: float = 2.0
    safety_cap: int | None = None
    timing: bool = False
    validate: bool = True

    def check(self, graph: GridGraph | None = None) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        for a in self.algos:
            if a not in ALGOS:
                raise ConfigError(f"unknown algo {a!r}")
        for name in ("p_delay", "p_add"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.agents < 0:
            raise ConfigError("agents must be >= 0")
        if self.horizon < 1 or self.d < 1 or self.threads < 1:
            raise ConfigError("horizon, d and threads must be >= 1")
        if self.mode == "lifelong" and self.t_max is None:
            raise ConfigError("lifelong mode needs t_max")
        if graph is not None and self.agents > graph.num_vertices:
            raise ConfigError(f"{self.agents} agents exceed {graph.num_vertices} passable cells")


def _instance(cfg: RunConfig, graph: GridGraph, gmap, seed: int) -> Instance:
    if cfg.scen:
        with open(cfg.scen, encoding="utf-8") as fh:
            entries = parse_scenario(fh.read(), gmap)
        if cfg.agents > len(entries):
            raise ConfigError(f"scenario has {len(entries)} entries, {cfg.agents} requested")
        entries = entries[: cfg.agents]
    else:
        try:
            entries = random_scenario(graph, cfg.agents, seed)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    streams = GoalStreams(graph, seed) if cfg.mode in ("lifelong", "item-budget") else None
    try:
        return Instance.from_scenario(graph, entries, streams)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _termination(cfg: RunConfig) -> Termination:
    if cfg.mode == "one-shot":
        if cfg.t_max is not None:
            return Termination(T_MAX, t_max=cfg.t_max, safety_cap=cfg.safety_cap)
        return Termination(ALL_AT_GOAL, safety_cap=cfg.safety_cap)
    if cfg.mode == "lifelong":
        return Termination(T_MAX, t_max=cfg.t_max, safety_cap=cfg.safety_cap or cfg.t_max + 1)
    return Termination(BUDGET, budget_s=cfg.budget_s, step_cost_s=cfg.step_cost_s,
                       safety_cap=cfg.safety_cap or int(cfg.budget_s / cfg.step_cost_s) + 1)


def run_single(cfg: RunConfig, algo: str, seed: int, graph: GridGraph | None = None, gmap=None,
               threads: int | None = None) -> tuple[dict, ExecutionTrace, Instance]:
    if gmap is None:
        gmap = load_map(cfg.map)
    graph = graph or build_graph(gmap)
    inst = _instance(cfg, graph, gmap, seed)
    pcfg = PlannerConfig(horizon=cfg.horizon, d=cfg.d, hindrance=cfg.hindrance, balanced=cfg.balanced,
                         seed=seed, threads=threads or cfg.threads)
    ctrl = FicoController(graph, pcfg) if algo == "fico" else PibtController(graph, pcfg)
    act = DelayActuator(cfg.p_delay, seed) if cfg.p_delay > 0 else PerfectActuator()
    env = Environment(cfg.p_add, seed)
    trace = run_closed_loop(ctrl, act, env, inst, _termination(cfg))
    m = compute_metrics(trace, inst)
    row = {
        "map": cfg.map, "scen": cfg.scen or "", "mode": cfg.mode, "algo": algo, "agents": cfg.agents,
        "seed": seed, "horizon": cfg.horizon, "d": cfg.d, "hindrance": int(cfg.hindrance),
        "balanced": int(cfg.balanced), "p_delay": cfg.p_delay, "p_add": cfg.p_add,
        "t_max": cfg.t_max if cfg.t_max is not None else "", "steps": trace.length,
        "termination": trace.termination, "complete": int(trace.complete), "makespan": m.makespan,
        "soc": m.soc, "delta_soc": m.delta_soc, "throughput": m.throughput,
        "goals_reached": m.goals_reached, "items_delivered": m.items_delivered_in_budget,
        "final_agents": len(trace.states[-1]),
        "mean_cf_fraction": round(m.mean_cf_fraction, 6) if m.mean_cf_fraction is not None else None,
        "violations": len(validate_trace(trace, graph)) if cfg.validate else None,
    }
    if cfg.timing:
        ps = np.array(m.plan_seconds) if m.plan_seconds else np.zeros(1)
        row.update(ert_s=m.ert, mean_plan_s=float(ps.mean()), max_plan_s=float(ps.max()),
                   total_plan_s=float(ps.sum()))
    return row, trace, inst


def run_benchmark(cfg: RunConfig, trace_dir: str | None = None) -> list[dict]:
    """One row per (seed, algo), ordered by seed then algo."""
    gmap = load_map(cfg.map)
    graph = build_graph(gmap)
    cfg.check(graph)
    warmup()
    jobs = [(seed, algo) for seed in cfg.seeds for algo in cfg.algos]
    # independent entries share the thread budget; a lone entry gets all of it
    inner = cfg.threads if len(jobs) == 1 else 1
    outer = min(cfg.threads, len(jobs)) if len(jobs) > 1 else 1

    def one(job):
        seed, algo = job
        row, trace, _ = run_single(cfg, algo, seed, graph, gmap, inner)
        if trace_dir:
            os.makedirs(trace_dir, exist_ok=True)
            path = os.path.join(trace_dir, f"trace_{algo}_seed{seed}.jsonl")
            with open(path, "w", encoding="utf-8") as fh:
                export_trace(trace, graph, fh, {k: row[k] for k in ("algo", "seed", "soc", "makespan")})
        return row

    if outer > 1:
        with ThreadPoolExecutor(outer) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def report_agent_reduction(cfg: RunConfig, agent_counts) -> list[dict]:
    """Mean conflict-free fraction of FICO's first-level split, per density and seed."""
    rows = []
    for n in agent_counts:
        sub = RunConfig(**{**cfg.__dict__, "agents": int(n), "algos": ("fico",), "timing": False,
                           "validate": False})
        for r in run_benchmark(sub):
            rows.append({"map": cfg.map, "mode": cfg.mode, "agents": int(n), "seed": r["seed"],
                         "horizon": cfg.horizon, "steps": r["steps"], "cf_fraction": r["mean_cf_fraction"]})
    return rows


def summarize_reduction(rows: list[dict]) -> dict[int, float]:
    out: dict[int, list[float]] = {}
    for r in rows:
        out.setdefault(r["agents"], []).append(r["cf_fraction"])
    return {n: float(np.mean(v)) for n, v in out.items()}
