"""Closed-loop execution, trace validation and metrics."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .grid_world import GridGraph
from .heuristics import HeuristicTable
from .system_model import Actuator, Controller, Environment, Instance, Movement, State

ALL_AT_GOAL = "all_at_goal"
T_MAX = "t_max"
BUDGET = "budget"


@dataclass
class Termination:
    kind: str = ALL_AT_GOAL
    t_max: int | None = None
    budget_s: float = 60.0
    step_cost_s: float = 2.0  # virtual execution time per step in budget mode
    safety_cap: int | None = None

    def __post_init__(self):
        if self.kind not in (ALL_AT_GOAL, T_MAX, BUDGET):
            raise ValueError(f"unknown termination {self.kind!r}")
        if self.kind == T_MAX and (self.t_max is None or self.t_max < 0):
            raise ValueError("t_max termination needs t_max >= 0")


def default_safety_cap(graph: GridGraph, n_agents: int) -> int:
    w, h = (graph.width, graph.height) if graph.is_grid else (graph.num_vertices, 0)
    return 10 * (w + h + n_agents)


@dataclass
class ExecutionTrace:
    states: list[np.ndarray]  # positions at t = 0..T (arrays grow when agents are added)
    planned: list[Movement] = field(default_factory=list)
    executed: list[Movement] = field(default_factory=list)
    goals: list[np.ndarray] = field(default_factory=list)  # goals in force at t = 0..T
    plan_seconds: list[float] = field(default_factory=list)
    arrivals: list[list[int]] = field(default_factory=list)  # per agent, timesteps of goal arrival
    cf_fractions: list[float] = field(default_factory=list)
    added: list[int] = field(default_factory=list)  # agents added after step t
    termination: str = ""
    complete: bool = True
    virtual_seconds: float = 0.0
    items_in_budget: int | None = None

    @property
    def length(self) -> int:
        return len(self.executed)

    def positions_equal(self, other: "ExecutionTrace") -> bool:
        return len(self.states) == len(other.states) and all(
            np.array_equal(a, b) for a, b in zip(self.states, other.states))


def run_closed_loop(controller: Controller, actuator: Actuator, environment: Environment,
                    instance: Instance, termination: Termination) -> ExecutionTrace:
    """Iterate plan -> actuate -> environment until the termination rule fires.

    Randomness lives in the actuator and environment (seeded per timestep), so a run is a
    deterministic function of its inputs apart from the recorded wall-clock times.
    """
    state = State(instance.starts.copy())
    cap = termination.safety_cap or default_safety_cap(instance.graph, instance.num_agents)
    if termination.kind == T_MAX and termination.safety_cap is None:
        cap = max(cap, termination.t_max)
    trace = ExecutionTrace(states=[state.positions.copy()], goals=[instance.goals.copy()])
    trace.arrivals = [[] for _ in range(instance.num_agents)]
    virtual = 0.0
    items = 0
    t = instance.t
    while True:
        steps = len(trace.executed)
        if termination.kind == ALL_AT_GOAL and np.array_equal(state.positions, instance.goals):
            trace.termination = ALL_AT_GOAL
            break
        if termination.kind == T_MAX and steps >= termination.t_max:
            trace.termination = T_MAX
            break
        if termination.kind == BUDGET and virtual + termination.step_cost_s > termination.budget_s:
            trace.termination = BUDGET
            break
        if steps >= cap:
            trace.termination = "safety_cap"
            trace.complete = False
            break
        t0 = time.perf_counter()
        planned = controller.plan(state, instance, t)
        dt = time.perf_counter() - t0
        stats = getattr(controller, "last_stats", None)
        if stats is not None:
            trace.cf_fractions.append(stats.cf_fraction)
        executed = actuator.actuate(planned, state, t)
        state, instance = environment.step(executed, instance)
        t += 1
        trace.planned.append(planned)
        trace.executed.append(executed)
        trace.plan_seconds.append(dt)
        trace.states.append(state.positions.copy())
        trace.goals.append(instance.goals.copy())
        events = environment.last_events
        trace.added.append(events.added)
        for _ in range(events.added):
            trace.arrivals.append([])
        for a in events.arrived:
            trace.arrivals[a].append(len(trace.executed))
        if termination.kind == BUDGET:
            virtual += max(dt, 0.0) + termination.step_cost_s
            if virtual <= termination.budget_s:
                items += len(events.arrived)
    trace.virtual_seconds = virtual
    if termination.kind == BUDGET:
        trace.items_in_budget = items
    return trace


@dataclass
class Violation:
    t: int  # transition t -> t+1
    kind: str  # "vertex", "edge", "adjacency", "source"
    agents: tuple[int, ...]
    vertex: int | None = None


def validate_trace(trace: ExecutionTrace, graph: GridGraph) -> list[Violation]:
    """Naive per-step check of vertex conflicts, edge swaps and move legality."""
    out: list[Violation] = []
    nbr = _padded_neighbors(graph)
    for t, mv in enumerate(trace.executed):
        src, dst = mv.src, mv.dst
        n = len(src)
        prev = trace.states[t]
        if not np.array_equal(src, prev[:n]) or len(prev) != n:
            out.append(Violation(t, "source", tuple(np.flatnonzero(src != prev[:n]).tolist())))
        nxt = trace.states[t + 1]
        moving = src != dst
        legal = ~moving | np.any(nbr[src] == dst[:, None], axis=1)
        for a in np.flatnonzero(~legal):
            out.append(Violation(t, "adjacency", (int(a),), int(dst[a])))
        # pairwise over all agents, including any added at t+1
        same = nxt[:, None] == nxt[None, :]
        iu = np.triu_indices(len(nxt), 1)
        for i, j in zip(*(x[same[iu]] for x in iu)):
            out.append(Violation(t + 1, "vertex", (int(i), int(j)), int(nxt[i])))
        swap = (src[:, None] == dst[None, :]) & (dst[:, None] == src[None, :]) & moving[:, None]
        iu = np.triu_indices(n, 1)
        for i, j in zip(*(x[swap[iu]] for x in iu)):
            out.append(Violation(t, "edge", (int(i), int(j))))
    return out


def _padded_neighbors(graph: GridGraph) -> np.ndarray:
    deg = np.diff(graph.indptr)
    width = max(1, int(deg.max(initial=0)))
    nbr = np.full((graph.num_vertices, width), -1, dtype=np.int64)
    for k in range(width):
        has = deg > k
        nbr[has, k] = graph.indices[graph.indptr[:-1][has] + k]
    return nbr


@dataclass
class MetricsReport:
    makespan: int
    soc: int
    delta_soc: int | None
    throughput: float | None
    ert: float | None
    plan_seconds: list[float]
    items_delivered_in_budget: int | None
    goals_reached: int
    complete: bool
    mean_cf_fraction: float | None


def shortest_distances(graph: GridGraph, starts: np.ndarray, goals: np.ndarray) -> np.ndarray:
    table = HeuristicTable(graph, 8)
    out = np.empty(len(starts), dtype=np.int64)
    for i, (s, g) in enumerate(zip(starts, goals)):
        d = table.context(int(g)).distance(int(s))
        if d is None:
            raise ValueError(f"agent {i}: goal unreachable")
        out[i] = d
    return out


def compute_metrics(trace: ExecutionTrace, instance: Instance) -> MetricsReport:
    """Metrics of a trace produced from ``instance`` (the instance at t = 0)."""
    T = trace.length
    soc = 0
    for t in range(T + 1):
        pos = trace.states[t]
        soc += int(np.count_nonzero(pos != trace.goals[t][: len(pos)]))
    goals_reached = sum(len(a) for a in trace.arrivals)
    lifelong = instance.goal_streams is not None
    delta = None
    if not lifelong:
        starts = _agent_starts(trace)  # initial or spawn position
        goals = trace.goals[-1]
        delta = soc - int(shortest_distances(instance.graph, starts, goals).sum())
    throughput = goals_reached / T if (lifelong and T > 0) else None
    cf = float(np.mean(trace.cf_fractions)) if trace.cf_fractions else None
    return MetricsReport(
        makespan=T,
        soc=soc,
        delta_soc=delta,
        throughput=throughput,
        ert=trace.plan_seconds[0] if trace.plan_seconds else None,
        plan_seconds=list(trace.plan_seconds),
        items_delivered_in_budget=trace.items_in_budget,
        goals_reached=goals_reached,
        complete=trace.complete,
        mean_cf_fraction=cf,
    )


def _agent_starts(trace: ExecutionTrace) -> np.ndarray:
    n = len(trace.states[-1])
    starts = np.empty(n, dtype=np.int64)
    n0 = len(trace.states[0])
    starts[:n0] = trace.states[0]
    for t in range(1, len(trace.states)):
        prev_n = len(trace.states[t - 1])
        cur = trace.states[t]
        starts[prev_n : len(cur)] = cur[prev_n:]
    return starts


def replay(trace: ExecutionTrace) -> list[np.ndarray]:
    """States rebuilt from x_0 and the executed movements (added agents appended)."""
    out = [trace.states[0].copy()]
    for t, mv in enumerate(trace.executed):
        nxt = mv.dst.copy()
        extra = trace.states[t + 1][len(nxt):]
        out.append(np.concatenate([nxt, extra]).astype(np.int32))
    return out


def export_trace(trace: ExecutionTrace, graph: GridGraph, fh: IO[str], summary: dict | None = None) -> None:
    """JSON lines: one ``pos`` record per (timestep, agent) and a final ``summary`` record."""
    for t, pos in enumerate(trace.states):
        for a, v in enumerate(pos):
            rec = {"type": "pos", "t": t, "agent": a, "vertex": int(v)}
            if graph.coords is not None:
                rec["x"], rec["y"] = (int(c) for c in graph.coords[v])
            fh.write(json.dumps(rec) + "\n")
    rec = {"type": "summary", "steps": trace.length, "termination": trace.termination,
           "complete": trace.complete, "agents": len(trace.states[-1])}
    if summary:
        rec.update(summary)
    fh.write(json.dumps(rec) + "\n")
