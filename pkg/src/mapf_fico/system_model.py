"""Controller / actuator / environment model of a running MAPF system.

Agents are dense ids ``0..N-1``; per-agent data lives in arrays indexed by id.
Added agents receive the next free id, so arrays only ever grow.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .grid_world import GridGraph, ScenarioEntry

# rng purposes; combined with (seed, t) into independent streams
STREAM_INDIVIDUAL = 0
STREAM_PIBT = 1
STREAM_DELAY = 2
STREAM_ADDITION = 3
STREAM_GOALS = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


class StreamExhausted(RuntimeError):
    pass


@dataclass
class GoalStreams:
    """Future goals per agent.

    Without explicit lists, the k-th goal of agent ``a`` is drawn uniformly from the cells
    of its connected component with a generator keyed by (seed, a, k), redrawing while it
    equals the previous goal, so streams are reproducible and need no mutable state.
    """

    graph: GridGraph
    seed: int = 0
    lists: dict[int, Sequence[int]] | None = None
    on_exhausted: str = "hold"  # or "error"

    def __post_init__(self):
        if self.on_exhausted not in ("hold", "error"):
            raise ValueError("on_exhausted must be 'hold' or 'error'")
        self._cells: dict[int, np.ndarray] = {}

    def goal(self, agent: int, k: int, previous: int) -> int:
        if self.lists is not None and agent in self.lists:
            seq = self.lists[agent]
            if k < len(seq):
                return int(seq[k])
            if self.on_exhausted == "error":
                raise StreamExhausted(f"agent {agent} has no goal #{k}")
            return previous
        comp = int(self.graph.component[previous])
        if comp not in self._cells:
            self._cells[comp] = self.graph.component_vertices(previous)
        cells = self._cells[comp]
        if len(cells) == 1:
            return previous
        rng = stream(self.seed, STREAM_GOALS, agent, k)
        g = previous
        while g == previous:
            g = int(cells[rng.integers(len(cells))])
        return g


@dataclass
class Instance:
    graph: GridGraph
    starts: np.ndarray
    goals: np.ndarray
    goal_streams: GoalStreams | None = None
    t: int = 0
    elapsed: np.ndarray | None = None  # steps since last goal arrival, drives priorities
    goal_index: np.ndarray | None = None  # how many stream goals each agent has consumed

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.int32)
        self.goals = np.asarray(self.goals, dtype=np.int32)
        n = len(self.starts)
        if len(self.goals) != n:
            raise ValueError("starts and goals differ in length")
        if self.elapsed is None:
            self.elapsed = np.zeros(n, dtype=np.int64)
        if self.goal_index is None:
            self.goal_index = np.zeros(n, dtype=np.int64)

    @property
    def num_agents(self) -> int:
        return len(self.starts)

    @property
    def lifelong(self) -> bool:
        return self.goal_streams is not None

    def validate(self, one_shot_distinct: bool | None = None) -> None:
        g = self.graph
        for arr, what in ((self.starts, "start"), (self.goals, "goal")):
            if np.any((arr < 0) | (arr >= g.num_vertices)):
                raise ValueError(f"{what} outside the graph")
        bad = np.flatnonzero(g.component[self.starts] != g.component[self.goals])
        if len(bad):
            raise ValueError(f"goal unreachable for agents {bad[:10].tolist()}")
        if len(np.unique(self.starts)) != self.num_agents:
            raise ValueError("two agents share a start vertex")
        if one_shot_distinct is None:
            one_shot_distinct = not self.lifelong
        if one_shot_distinct and len(np.unique(self.goals)) != self.num_agents:
            raise ValueError("two agents share a goal vertex")

    @classmethod
    def from_scenario(cls, graph: GridGraph, entries: Sequence[ScenarioEntry],
                      goal_streams: GoalStreams | None = None) -> "Instance":
        inst = cls(graph, [e.start for e in entries], [e.goal for e in entries], goal_streams)
        inst.validate()
        return inst


@dataclass
class State:
    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int32)


@dataclass
class Movement:
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int32)
        self.dst = np.asarray(self.dst, dtype=np.int32)

    @classmethod
    def wait(cls, state: State) -> "Movement":
        return cls(state.positions.copy(), state.positions.copy())

    def __eq__(self, other) -> bool:
        return (isinstance(other, Movement) and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst))


class Controller(Protocol):
    def plan(self, state: State, instance: Instance, t: int) -> Movement: ...


class Actuator(Protocol):
    def actuate(self, planned: Movement, state: State, t: int) -> Movement: ...


def perfect_actuate(planned: Movement, state: State) -> Movement:
    return Movement(planned.src.copy(), planned.dst.copy())


@dataclass
class DependencyGraph:
    """Functional digraph: ``succ[i] = j`` when i's destination is j's current vertex."""

    succ: np.ndarray

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in enumerate(self.succ) if j >= 0]


def build_dependency_graph(state: State, planned: Movement) -> DependencyGraph:
    pos = state.positions
    n = len(pos)
    succ = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return DependencyGraph(succ)
    order = np.argsort(pos, kind="stable")
    sorted_pos = pos[order]
    idx = np.searchsorted(sorted_pos, planned.dst)
    idx = np.minimum(idx, n - 1)
    hit = sorted_pos[idx] == planned.dst
    j = np.where(hit, order[idx], -1)
    j[j == np.arange(n)] = -1
    succ[:] = j
    return DependencyGraph(succ)


def stationary_set(dep: DependencyGraph, delayed) -> np.ndarray:
    """Agents with a directed path to a delayed agent (delayed agents included), sorted."""
    n = len(dep.succ)
    mask = np.zeros(n, dtype=bool)
    delayed = np.asarray(sorted(delayed) if isinstance(delayed, (set, frozenset)) else delayed)
    if delayed.dtype == bool:
        delayed = np.flatnonzero(delayed)
    if len(delayed) == 0:
        return np.zeros(0, dtype=np.int64)
    preds: list[list[int]] = [[] for _ in range(n)]
    for i, j in enumerate(dep.succ):
        if j >= 0:
            preds[j].append(i)
    stack = [int(a) for a in delayed]
    mask[stack] = True
    while stack:
        j = stack.pop()
        for i in preds[j]:
            if not mask[i]:
                mask[i] = True
                stack.append(i)
    return np.flatnonzero(mask)


def delay_actuate(planned: Movement, state: State, p_delay: float, rng: np.random.Generator,
                  delayed: np.ndarray | None = None) -> Movement:
    """Bernoulli(p_delay) delays, propagated backwards along the dependency graph."""
    if not 0.0 <= p_delay <= 1.0:
        raise ValueError("p_delay must lie in [0, 1]")
    n = len(state.positions)
    if delayed is None:
        delayed = rng.random(n) < p_delay
    stay = stationary_set(build_dependency_graph(state, planned), delayed)
    dst = planned.dst.copy()
    dst[stay] = state.positions[stay]
    return Movement(planned.src.copy(), dst)


class PerfectActuator:
    def actuate(self, planned: Movement, state: State, t: int) -> Movement:
        return perfect_actuate(planned, state)


@dataclass
class DelayActuator:
    p_delay: float
    seed: int = 0

    def actuate(self, planned: Movement, state: State, t: int) -> Movement:
        return delay_actuate(planned, state, self.p_delay, stream(self.seed, STREAM_DELAY, t))


@dataclass
class StepEvents:
    arrived: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    added: int = 0


@dataclass
class Environment:
    """Static when ``p_add == 0`` and the instance has no goal streams.

    Goal updates happen for every agent whose new position equals its current goal,
    provided the instance carries goal streams. Agent addition places one agent with
    probability ``p_add`` on a cell that is free at t+1.
    """

    p_add: float = 0.0
    seed: int = 0
    last_events: StepEvents = field(default_factory=StepEvents, repr=False)

    def step(self, executed: Movement, instance: Instance) -> tuple[State, Instance]:
        pos = executed.dst.copy()
        goals = instance.goals.copy()
        goal_index = instance.goal_index.copy()
        at_goal = pos == goals
        arrived = np.flatnonzero(at_goal & (executed.src != goals))
        elapsed = instance.elapsed + 1
        elapsed[at_goal] = 0
        if instance.goal_streams is not None:
            for a in arrived:
                goal_index[a] += 1
                goals[a] = instance.goal_streams.goal(int(a), int(goal_index[a]), int(goals[a]))
        starts = instance.starts
        added = 0
        if self.p_add > 0.0:
            rng = stream(self.seed, STREAM_ADDITION, instance.t)
            if rng.random() < self.p_add:
                spawn = sample_addition(instance.graph, pos, rng)
                if spawn is not None:
                    s, g = spawn
                    pos = np.append(pos, np.int32(s))
                    starts = np.append(starts, np.int32(s))
                    goals = np.append(goals, np.int32(g))
                    elapsed = np.append(elapsed, 0)
                    goal_index = np.append(goal_index, 0)
                    added = 1
        self.last_events = StepEvents(arrived, added)
        nxt = replace(instance, starts=starts, goals=goals, t=instance.t + 1, elapsed=elapsed,
                      goal_index=goal_index)
        return State(pos), nxt


def sample_addition(graph: GridGraph, occupied_next: np.ndarray, rng: np.random.Generator):
    """(start, goal) for a new agent, or None when no free cell can host one."""
    free = np.ones(graph.num_vertices, dtype=bool)
    free[occupied_next] = False
    sizes = np.bincount(graph.component)
    free &= sizes[graph.component] >= 2
    cells = np.flatnonzero(free)
    if len(cells) == 0:
        return None
    s = int(cells[rng.integers(len(cells))])
    comp = graph.component_vertices(s)
    comp = comp[comp != s]
    g = int(comp[rng.integers(len(comp))])
    return s, g
