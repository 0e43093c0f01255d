"""Lazy perfect-distance heuristic, lazy shortest-path counts and the balanced sampler.

A single resumable backward BFS per goal fills both tables. A vertex is *discovered*
(distance known) when pushed and *settled* (path count known) when popped; every
neighbor one step closer to the goal is popped before any vertex of the next layer,
so the count of a vertex can be summed at pop time.

Counts are float64: only their ratios are used for sampling and the dynamic range
(~1e308) covers shortest-path counts on any benchmark-sized grid.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .grid_world import GridGraph

UNKNOWN = np.iinfo(np.int32).max  # distance sentinel: not yet discovered / unreachable


class UnreachableError(ValueError):
    pass


@njit(cache=True, nogil=True)
def _pop_one(s, dist, count, queue, head, tail, expanded, indptr, indices):
    v = queue[s, head[s]]
    head[s] += 1
    expanded[s] += 1
    d = dist[s, v]
    c = 1.0 if d == 0 else 0.0
    t = tail[s]
    for k in range(indptr[v], indptr[v + 1]):
        w = indices[k]
        dw = dist[s, w]
        if dw == d - 1:
            c += count[s, w]
        elif dw == UNKNOWN:
            dist[s, w] = d + 1
            queue[s, t] = w
            t += 1
    tail[s] = t
    count[s, v] = c


@njit(cache=True, nogil=True)
def settle_vertex(s, v, dist, count, queue, head, tail, expanded, indptr, indices):
    """Advance context ``s`` until ``v`` is settled; False if ``v`` is unreachable."""
    while count[s, v] == 0.0 and head[s] < tail[s]:
        _pop_one(s, dist, count, queue, head, tail, expanded, indptr, indices)
    return count[s, v] > 0.0


@njit(cache=True, nogil=True)
def settle_depth(s, depth, dist, count, queue, head, tail, expanded, indptr, indices):
    while head[s] < tail[s] and dist[s, queue[s, head[s]]] <= depth:
        _pop_one(s, dist, count, queue, head, tail, expanded, indptr, indices)


@njit(cache=True, nogil=True)
def settle_agents(agents, pos, slots, extra, dist, count, queue, head, tail, expanded,
                  indptr, indices, reachable):
    """Settle each agent's position, then every vertex up to ``extra`` layers further.

    Agents sharing a context must be in the same call (contexts are single-owner).
    """
    for a in agents:
        s = slots[a]
        ok = settle_vertex(s, pos[a], dist, count, queue, head, tail, expanded, indptr, indices)
        reachable[a] = ok
        if ok:
            settle_depth(s, dist[s, pos[a]] + extra, dist, count, queue, head, tail, expanded,
                         indptr, indices)


@njit(cache=True, nogil=True)
def sample_next(s, v, u, balanced, dist, count, indptr, indices):
    """Candidate of ``v`` chosen by uniform draw ``u``; weights are path counts or 1."""
    d = dist[s, v]
    if d == 0:
        return v
    total = 0.0
    for k in range(indptr[v], indptr[v + 1]):
        w = indices[k]
        if dist[s, w] == d - 1:
            total += count[s, w] if balanced else 1.0
    target = u * total
    acc = 0.0
    chosen = v
    for k in range(indptr[v], indptr[v + 1]):
        w = indices[k]
        if dist[s, w] == d - 1:
            acc += count[s, w] if balanced else 1.0
            chosen = w
            if acc > target:
                break
    return chosen


@njit(cache=True, nogil=True)
def sample_paths(agents, start_tau, slots, uniforms, balanced, plans, dist, count, indptr, indices):
    """Greedy balanced rollouts: row ``a`` of ``plans`` is filled from ``start_tau[a]`` on."""
    horizon = plans.shape[1] - 1
    for a in agents:
        s = slots[a]
        v = plans[a, start_tau[a]]
        for tau in range(start_tau[a], horizon):
            v = sample_next(s, v, uniforms[a, tau], balanced, dist, count, indptr, indices)
            plans[a, tau + 1] = v


class HeuristicTable:
    """Pool of per-goal contexts backed by 2-D arrays so compiled kernels can index them.

    Contexts are keyed by goal vertex and shared by all agents with that goal.
    Contexts whose goal is no longer requested are recycled when the pool is full.
    """

    def __init__(self, graph: GridGraph, capacity: int = 64):
        self.graph = graph
        self._slot_of_goal: dict[int, int] = {}
        self._goal_of_slot: list[int] = []
        self._free: list[int] = []
        self._alloc(max(1, capacity))

    def _alloc(self, capacity: int) -> None:
        # new rows stay uninitialised until a goal claims them (see _reset)
        n = self.graph.num_vertices
        old = len(self._goal_of_slot)
        for name, dtype, shape in (
            ("dist", np.int32, (capacity, n)),
            ("count", np.float64, (capacity, n)),
            ("queue", np.int32, (capacity, n)),
            ("head", np.int32, (capacity,)),
            ("tail", np.int32, (capacity,)),
            ("expanded", np.int64, (capacity,)),
        ):
            arr = np.empty(shape, dtype=dtype)
            if old:
                arr[:old] = getattr(self, name)[:old]
            setattr(self, name, arr)
        self._goal_of_slot.extend([-1] * (capacity - old))
        self._free.extend(range(capacity - 1, old - 1, -1))

    @property
    def capacity(self) -> int:
        return len(self._goal_of_slot)

    def arrays(self):
        return (self.dist, self.count, self.queue, self.head, self.tail, self.expanded)

    def _reset(self, s: int, goal: int) -> None:
        self.dist[s].fill(UNKNOWN)
        self.count[s].fill(0.0)
        self.dist[s, goal] = 0
        self.queue[s, 0] = goal
        self.head[s] = 0
        self.tail[s] = 1
        self.expanded[s] = 0
        self._goal_of_slot[s] = goal
        self._slot_of_goal[goal] = s

    def slots_for(self, goals: np.ndarray) -> np.ndarray:
        """Slot index per entry of ``goals``, creating contexts as needed."""
        goals = np.asarray(goals)
        uniq = np.unique(goals)
        missing = [int(g) for g in uniq if int(g) not in self._slot_of_goal]
        if len(missing) > len(self._free):
            wanted = set(int(g) for g in uniq)
            for g, s in list(self._slot_of_goal.items()):
                if g not in wanted:
                    del self._slot_of_goal[g]
                    self._goal_of_slot[s] = -1
                    self._free.append(s)
        if len(missing) > len(self._free):
            need = len(self._slot_of_goal) + len(missing)
            cap = self.capacity
            while cap < need:
                cap *= 2
            self._alloc(cap)
        for g in missing:
            self._reset(self._free.pop(), g)
        lookup = np.array([self._slot_of_goal[int(g)] for g in uniq], dtype=np.int32)
        return lookup[np.searchsorted(uniq, goals)] if len(goals) else np.zeros(0, np.int32)

    def context(self, goal: int) -> "GoalContext":
        if not 0 <= goal < self.graph.num_vertices:
            raise ValueError(f"goal {goal} is not a vertex")
        slot = int(self.slots_for(np.array([goal]))[0])
        return GoalContext(self, goal, slot)

    def settle(self, slot: int, v: int) -> bool:
        g = self.graph
        return settle_vertex(slot, v, *self.arrays(), g.indptr, g.indices)

    def settle_agents(self, agents, pos, slots, extra: int) -> np.ndarray:
        g = self.graph
        reachable = np.zeros(len(pos), dtype=np.bool_)
        settle_agents(np.asarray(agents, dtype=np.int64), pos, slots, extra, *self.arrays(),
                      g.indptr, g.indices, reachable)
        return reachable


class GoalContext:
    """Handle on one goal's lazily filled distance and count tables."""

    def __init__(self, table: HeuristicTable, goal: int, slot: int):
        self.table = table
        self.goal = goal
        self.slot = slot

    def _check(self) -> None:
        if self.table._goal_of_slot[self.slot] != self.goal:
            raise RuntimeError("context was recycled by its table")

    @property
    def expanded(self) -> int:
        """Number of BFS pops performed so far."""
        return int(self.table.expanded[self.slot])

    def settled_max_distance(self) -> int:
        """Largest distance among settled vertices (-1 if none)."""
        t = self.table
        h = int(t.head[self.slot])
        if h == 0:
            return -1
        return int(t.dist[self.slot, t.queue[self.slot, h - 1]])

    def distance(self, v: int) -> int | None:
        self._check()
        if not self.table.settle(self.slot, v):
            return None
        return int(self.table.dist[self.slot, v])

    def path_count(self, v: int) -> float:
        if self.distance(v) is None:
            raise UnreachableError(f"vertex {v} cannot reach goal {self.goal}")
        return float(self.table.count[self.slot, v])

    def candidate_set(self, v: int) -> list[int]:
        d = self.distance(v)
        if d is None:
            raise UnreachableError(f"vertex {v} cannot reach goal {self.goal}")
        if d == 0:
            return []
        dist = self.table.dist[self.slot]
        return [int(w) for w in self.table.graph.neighbors(v) if dist[w] == d - 1]

    def sample_balanced(self, v: int, rng: np.random.Generator, balanced: bool = True) -> int:
        if self.distance(v) is None:
            raise UnreachableError(f"vertex {v} cannot reach goal {self.goal}")
        g = self.table.graph
        return int(sample_next(self.slot, v, rng.random(), balanced, self.table.dist,
                               self.table.count, g.indptr, g.indices))


def distance(ctx: GoalContext, v: int) -> int | None:
    """Exact shortest-path length from ``v`` to the context goal, ``None`` if unreachable."""
    return ctx.distance(v)


def path_count(ctx: GoalContext, v: int) -> float:
    return ctx.path_count(v)


def candidate_set(ctx: GoalContext, v: int) -> list[int]:
    """Neighbors of ``v`` exactly one step closer to the goal, ascending id; empty at the goal."""
    return ctx.candidate_set(v)


def sample_balanced(ctx: GoalContext, v: int, rng: np.random.Generator) -> int:
    """Next vertex drawn with probability proportional to its shortest-path count."""
    return ctx.sample_balanced(v, rng)
