"""Individual horizon planning, PIBT, group replanning and the FICO step.

Random draws are per-agent rows of matrices keyed by (seed, t, purpose[, tau]), so every
result is independent of how work is split across threads.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _parallel
from .conflict_engine import (
    SpaceTimeHash,
    compute_reachable_sets,
    conflict_mask,
    group_by_reachability,
    move_blocked,
)
from .grid_world import GridGraph
from .heuristics import HeuristicTable, sample_paths, settle_agents
from .system_model import STREAM_INDIVIDUAL, STREAM_PIBT, Instance, Movement, State, stream


@dataclass
class PlannerConfig:
    horizon: int = 3
    d: int = 10
    hindrance: bool = True
    balanced: bool = True
    seed: int = 0
    threads: int = 1
    cache_plans: bool = True
    force_all_conflicting: bool = False  # skip detection; every agent gets replanned

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


class Workspace:
    """Per-graph planning state reused across steps: heuristic contexts and the plan cache."""

    def __init__(self, graph: GridGraph, capacity: int = 64):
        self.graph = graph
        self.table = HeuristicTable(graph, capacity)
        self.n_cand = graph.max_degree + 1
        self.cache: np.ndarray | None = None  # (N, H+1) finalized conflict-free plans
        self.cache_ok: np.ndarray | None = None
        self.cache_goal: np.ndarray | None = None

    def prepare(self, positions: np.ndarray, goals: np.ndarray, extra: int, threads: int) -> np.ndarray:
        """Slot per agent, with each context settled ``extra`` layers past the agent."""
        slots = self.table.slots_for(goals)
        order = np.argsort(slots, kind="stable")
        keys = slots[order]
        t = self.table
        g = self.graph
        reach = np.ones(len(positions), dtype=np.bool_)

        def work(lo, hi):
            settle_agents(order[lo:hi], positions, slots, extra, t.dist, t.count, t.queue, t.head,
                          t.tail, t.expanded, g.indptr, g.indices, reach)

        _parallel.run_chunks(work, _parallel.split_at_keys(keys, threads), threads)
        if not reach.all():
            bad = np.flatnonzero(~reach)
            raise ValueError(f"goal unreachable for agents {bad[:10].tolist()}")
        return slots

    def distances(self, slots: np.ndarray, vertices: np.ndarray) -> np.ndarray:
        return self.table.dist[slots, vertices].astype(np.int64)


# ---------------------------------------------------------------- individual planning


def _individual_uniforms(seed: int, t: int, n: int, horizon: int) -> np.ndarray:
    return stream(seed, STREAM_INDIVIDUAL, t).random((n, horizon))


def individual_plans(ws: Workspace, positions: np.ndarray, slots: np.ndarray, horizon: int,
                     uniforms: np.ndarray, balanced: bool = True, threads: int = 1,
                     reuse: np.ndarray | None = None) -> np.ndarray:
    """(N, H+1) greedy balanced rollouts; rows flagged in ``reuse`` extend ``ws.cache``."""
    n = len(positions)
    plans = np.empty((n, horizon + 1), dtype=np.int32)
    plans[:, 0] = positions
    start = np.zeros(n, dtype=np.int64)
    if reuse is not None and reuse.any():
        idx = np.flatnonzero(reuse)
        plans[idx, :horizon] = ws.cache[idx, 1:]
        start[reuse] = horizon - 1
    t = ws.table
    g = ws.graph
    agents = np.arange(n, dtype=np.int64)

    def work(lo, hi):
        sample_paths(agents[lo:hi], start, slots, uniforms, balanced, plans, t.dist, t.count,
                     g.indptr, g.indices)

    _parallel.run_chunks(work, _parallel.split_even(n, threads, 64), threads)
    return plans


def individual_plan(instance: Instance, state: State, horizon: int, seed: int = 0,
                    balanced: bool = True, ws: Workspace | None = None) -> np.ndarray:
    """Each agent follows the balanced sampler for ``horizon`` steps, waiting once at its goal."""
    ws = ws or Workspace(instance.graph)
    slots = ws.prepare(state.positions, instance.goals, horizon, 1)
    u = _individual_uniforms(seed, instance.t, instance.num_agents, horizon)
    return individual_plans(ws, state.positions, slots, horizon, u, balanced)


# ---------------------------------------------------------------- priorities


def priority_order(agents: np.ndarray, elapsed: np.ndarray, dist_now: np.ndarray) -> np.ndarray:
    """Agents sorted by elapsed desc, distance-to-goal desc, id asc."""
    agents = np.asarray(agents, dtype=np.int64)
    return agents[np.lexsort((agents, -dist_now[agents], -elapsed[agents]))]


def priorities_computation(instance: Instance, group, state: State, ws: Workspace | None = None) -> np.ndarray:
    ws = ws or Workspace(instance.graph)
    slots = ws.prepare(state.positions, instance.goals, 0, 1)
    dist_now = ws.distances(slots, state.positions)
    return priority_order(np.asarray(group), instance.elapsed, dist_now)


# ---------------------------------------------------------------- PIBT


@njit(cache=True, nogil=True)
def _prepare_candidates(i, a, u, tau, slot, dist, count, occ, now, qfrom_local, slots_local,
                        uniforms, hindrance, balanced, indptr, indices, cand, ncand):
    """Sorted candidate list of local agent ``i`` (global id ``a``) standing on ``u``."""
    deg = indptr[u + 1] - indptr[u]
    kd = np.empty(deg + 1, dtype=np.int64)
    kh = np.empty(deg + 1, dtype=np.int64)
    kr = np.empty(deg + 1, dtype=np.float64)
    m = 0
    for k in range(deg + 1):
        c = u if k == 0 else indices[indptr[u] + k - 1]
        if move_blocked(u, c, tau, occ):
            continue
        h = 0
        if hindrance:
            for q in range(indptr[c], indptr[c + 1]):
                nb = indices[q]
                j = now[nb]
                if j != -1 and j != i:
                    sj = slots_local[j]
                    if dist[sj, c] == dist[sj, nb] - 1:
                        h += 1
        w = count[slot, c] if balanced else 1.0
        if w <= 0.0:
            w = 1e-300
        r = -math.log(1.0 - uniforms[tau, a, k]) / w
        # insertion sort on (distance, hindrance, weighted random key)
        p = m
        while p > 0:
            pd = kd[p - 1]
            ph = kh[p - 1]
            dc = dist[slot, c]
            if pd > dc or (pd == dc and (ph > h or (ph == h and kr[p - 1] > r))):
                kd[p] = kd[p - 1]
                kh[p] = kh[p - 1]
                kr[p] = kr[p - 1]
                cand[i, p] = cand[i, p - 1]
                p -= 1
            else:
                break
        kd[p] = dist[slot, c]
        kh[p] = h
        kr[p] = r
        cand[i, p] = c
        m += 1
    ncand[i] = m


@njit(cache=True, nogil=True)
def _pibt_search(root, qfrom, qto, now, nxt, cand, ncand, stay_blocked, stack_agent, stack_cidx, touched, nt):
    """Iterative priority inheritance with backtracking from ``root``; returns (failed, nt)."""
    failed = False
    stack_agent[0] = root
    stack_cidx[0] = 0
    sp = 1
    returning = False
    ret = False
    while sp > 0:
        f = sp - 1
        i = stack_agent[f]
        if returning:
            returning = False
            if ret:
                sp -= 1
                returning = True
                continue
        descended = False
        done = False
        while stack_cidx[f] < ncand[i]:
            v = cand[i, stack_cidx[f]]
            stack_cidx[f] += 1
            if nxt[v] != -1:
                continue
            j = now[v]
            if j != -1 and qto[j] == qfrom[i]:
                continue  # would swap with j
            qto[i] = v
            nxt[v] = i
            touched[nt] = v
            nt += 1
            if j != -1 and j != i and qto[j] == -1:
                stack_agent[sp] = j
                stack_cidx[sp] = 0
                sp += 1
                descended = True
            else:
                done = True
            break
        if descended:
            continue
        if done:
            sp -= 1
            returning = True
            ret = True
            continue
        qto[i] = qfrom[i]
        nxt[qfrom[i]] = i
        touched[nt] = qfrom[i]
        nt += 1
        if stay_blocked[i]:
            failed = True
        sp -= 1
        returning = True
        ret = False
    return failed, nt


@njit(cache=True, nogil=True)
def _pibt_group(members, tau0, horizon, positions, slots, dist, count, occ, uniforms, hindrance,
                balanced, indptr, indices, n_cand, now, nxt, plans):
    """Run PIBT for ``members`` (priority order) over ``horizon`` transitions.

    Transition ``k`` uses ``occ[tau0 + k]`` -> ``occ[tau0 + k + 1]`` and ``uniforms[tau0 + k]``.
    Writes ``plans[a, tau0 + 1 .. tau0 + horizon]``; returns False on failure.
    """
    m = len(members)
    qfrom = np.empty(m, dtype=np.int32)
    qto = np.empty(m, dtype=np.int32)
    sl = np.empty(m, dtype=np.int32)
    cand = np.empty((m, n_cand), dtype=np.int32)
    ncand = np.empty(m, dtype=np.int64)
    stay_blocked = np.empty(m, dtype=np.bool_)
    stack_agent = np.empty(m, dtype=np.int64)
    stack_cidx = np.empty(m, dtype=np.int64)
    touched = np.empty(m * (n_cand + 1), dtype=np.int32)
    for i in range(m):
        qfrom[i] = positions[members[i]]
        sl[i] = slots[members[i]]
    ok = True
    for k in range(horizon):
        tau = tau0 + k
        for i in range(m):
            now[qfrom[i]] = i
            qto[i] = -1
        for i in range(m):
            a = members[i]
            u = qfrom[i]
            _prepare_candidates(i, a, u, tau, sl[i], dist, count, occ, now, qfrom, sl, uniforms,
                                hindrance, balanced, indptr, indices, cand, ncand)
            stay_blocked[i] = occ[tau + 1, u] != -1
        nt = 0
        failed = False
        for i in range(m):
            if qto[i] == -1:
                f, nt = _pibt_search(i, qfrom, qto, now, nxt, cand, ncand, stay_blocked,
                                     stack_agent, stack_cidx, touched, nt)
                if f:
                    failed = True
                    break
        for q in range(nt):
            nxt[touched[q]] = -1
        for i in range(m):
            now[qfrom[i]] = -1
        if failed:
            ok = False
            break
        for i in range(m):
            plans[members[i], tau + 1] = qto[i]
            qfrom[i] = qto[i]
    return ok


@njit(cache=True, nogil=True)
def _pibt_groups(group_ptr, members, lo, hi, horizon, positions, slots, dist, count, occ, uniforms,
                 hindrance, balanced, indptr, indices, n_cand, plans, ok):
    num_vertices = occ.shape[1]
    now = np.full(num_vertices, -1, dtype=np.int32)
    nxt = np.full(num_vertices, -1, dtype=np.int32)
    for g in range(lo, hi):
        mem = members[group_ptr[g] : group_ptr[g + 1]]
        ok[g] = _pibt_group(mem, 0, horizon, positions, slots, dist, count, occ, uniforms, hindrance,
                            balanced, indptr, indices, n_cand, now, nxt, plans)


def _pibt_uniforms(seed: int, t: int, n: int, horizon: int, n_cand: int) -> np.ndarray:
    return np.stack([stream(seed, STREAM_PIBT, t, tau).random((n, n_cand)) for tau in range(horizon)])


def _replan_groups(ws: Workspace, groups: list[np.ndarray], rank: np.ndarray, positions, slots, occ,
                   uniforms, horizon, hindrance, balanced, threads, plans) -> np.ndarray:
    ordered = [grp[np.argsort(rank[grp], kind="stable")] for grp in groups]
    ptr = np.zeros(len(groups) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(g) for g in ordered])
    members = np.concatenate(ordered).astype(np.int64) if ordered else np.zeros(0, np.int64)
    ok = np.zeros(len(groups), dtype=np.bool_)
    t = ws.table
    g = ws.graph

    def work(lo, hi):
        _pibt_groups(ptr, members, lo, hi, horizon, positions, slots, t.dist, t.count, occ, uniforms,
                     hindrance, balanced, g.indptr, g.indices, ws.n_cand, plans, ok)

    _parallel.run_chunks(work, _parallel.split_even(len(groups), threads, 4), threads)
    return ok


def pibt_step(ws: Workspace, group, positions: np.ndarray, slots: np.ndarray, priorities: np.ndarray,
              blocked: SpaceTimeHash | None, tau: int, uniforms: np.ndarray,
              hindrance: bool = True, balanced: bool = True) -> np.ndarray | None:
    """One PIBT transition tau -> tau+1 for ``group``.

    ``priorities`` lists the group in processing order. Returns the next vertex of every
    group member (in ``group`` order) or None when some member has no admissible vertex.
    Contexts in ``slots`` must already be settled around the members.
    """
    group = np.asarray(group, dtype=np.int64)
    order = np.asarray(priorities, dtype=np.int64)
    if set(order.tolist()) != set(group.tolist()):
        raise ValueError("priorities must list exactly the group members")
    if blocked is None:
        occ = np.full((tau + 2, ws.graph.num_vertices), -1, dtype=np.int32)
    else:
        occ = blocked.occ
    n = len(positions)
    plans = np.empty((n, tau + 2), dtype=np.int32)
    plans[:, tau] = positions
    pos_tau = np.zeros(n, dtype=np.int32)
    pos_tau[:] = positions
    t = ws.table
    g = ws.graph
    now = np.full(g.num_vertices, -1, dtype=np.int32)
    nxt = np.full(g.num_vertices, -1, dtype=np.int32)
    ok = _pibt_group(order, tau, 1, pos_tau, slots, t.dist, t.count, occ, uniforms, hindrance,
                     balanced, g.indptr, g.indices, ws.n_cand, now, nxt, plans)
    if not ok:
        return None
    return plans[group, tau + 1].copy()


@dataclass
class GroupPlanResult:
    ok: bool
    plans: np.ndarray | None  # (len(group), H+1) in group order


def replan_group(ws: Workspace, group, finalized: SpaceTimeHash, positions: np.ndarray, slots: np.ndarray,
                 priorities: np.ndarray, horizon: int, uniforms: np.ndarray,
                 hindrance: bool = True, balanced: bool = True) -> GroupPlanResult:
    """PIBT over ``horizon`` transitions against the finalized occupancy."""
    group = np.asarray(group, dtype=np.int64)
    order = np.asarray(priorities, dtype=np.int64)
    n = len(positions)
    plans = np.zeros((n, horizon + 1), dtype=np.int32)
    plans[:, 0] = positions
    t = ws.table
    g = ws.graph
    now = np.full(g.num_vertices, -1, dtype=np.int32)
    nxt = np.full(g.num_vertices, -1, dtype=np.int32)
    ok = _pibt_group(order, 0, horizon, np.asarray(positions, dtype=np.int32), slots, t.dist, t.count,
                     finalized.occ, uniforms, hindrance, balanced, g.indptr, g.indices, ws.n_cand,
                     now, nxt, plans)
    return GroupPlanResult(bool(ok), plans[group].copy() if ok else None)


# ---------------------------------------------------------------- congestion resolution


@njit(cache=True, nogil=True)
def _multi_source_bfs(sources, indptr, indices, num_vertices):
    dist = np.full(num_vertices, -1, dtype=np.int64)
    queue = np.empty(num_vertices, dtype=np.int64)
    tail = 0
    for s in sources:
        if dist[s] == -1:
            dist[s] = 0
            queue[tail] = s
            tail += 1
    head = 0
    while head < tail:
        v = queue[head]
        head += 1
        for k in range(indptr[v], indptr[v + 1]):
            w = indices[k]
            if dist[w] == -1:
                dist[w] = dist[v] + 1
                queue[tail] = w
                tail += 1
    return dist


def congestion_resolution(graph: GridGraph, conflicting: np.ndarray, positions: np.ndarray, d: int) -> np.ndarray:
    """Mask with the ``d`` conflict-free agents nearest to any conflicting agent added."""
    mask = np.asarray(conflicting, dtype=bool).copy()
    cf = np.flatnonzero(~mask)
    if len(cf) == 0:
        return mask
    dist = _multi_source_bfs(positions[mask].astype(np.int64), graph.indptr, graph.indices, graph.num_vertices)
    dcf = dist[positions[cf]]
    dcf = np.where(dcf < 0, np.iinfo(np.int64).max, dcf)
    chosen = cf[np.lexsort((cf, dcf))[:d]]
    mask[chosen] = True
    return mask


# ---------------------------------------------------------------- FICO


@dataclass
class StepStats:
    n_agents: int = 0
    n_conflict_free_initial: int = 0
    n_conflict_free_final: int = 0
    iterations: int = 0  # group-replanning rounds (0 when detection found no conflict)
    enlargements: int = 0
    n_groups: int = 0
    seconds: float = 0.0
    timings: dict = field(default_factory=dict)

    @property
    def cf_fraction(self) -> float:
        return self.n_conflict_free_initial / self.n_agents if self.n_agents else 1.0


def fico_step(instance: Instance, state: State, config: PlannerConfig, ws: Workspace | None = None,
              stats: StepStats | None = None) -> Movement:
    """One closed-loop planning cycle; returns the first transition of every agent."""
    t0 = time.perf_counter()
    graph = instance.graph
    ws = ws or Workspace(graph)
    stats = stats if stats is not None else StepStats()
    H = config.horizon
    threads = config.threads
    pos = state.positions
    goals = instance.goals
    n = len(pos)
    stats.n_agents = n
    if n == 0:
        return Movement(pos.copy(), pos.copy())
    slots = ws.prepare(pos, goals, H, threads)
    t1 = time.perf_counter()

    reuse = None
    if config.cache_plans and ws.cache is not None and ws.cache.shape[1] == H + 1:
        m = min(len(ws.cache), n)
        reuse = np.zeros(n, dtype=bool)
        reuse[:m] = ws.cache_ok[:m] & (ws.cache[:m, 1] == pos[:m]) & (ws.cache_goal[:m] == goals[:m])
    u_ind = _individual_uniforms(config.seed, instance.t, n, H)
    plans = individual_plans(ws, pos, slots, H, u_ind, config.balanced, threads, reuse)
    t2 = time.perf_counter()

    if config.force_all_conflicting:
        mask = np.ones(n, dtype=bool)
    else:
        mask = conflict_mask(plans, graph)
    stats.n_conflict_free_initial = int(n - mask.sum())
    t3 = time.perf_counter()

    if mask.any():
        dist_now = ws.distances(slots, pos)
        order = priority_order(np.arange(n), instance.elapsed, dist_now)
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        uniforms = _pibt_uniforms(config.seed, instance.t, n, H, ws.n_cand)
        while True:
            stats.iterations += 1
            cf = np.flatnonzero(~mask)
            blocked = SpaceTimeHash.from_plans(plans, cf, graph.num_vertices)
            regions = compute_reachable_sets(graph, np.flatnonzero(mask), pos, H, blocked, threads)
            grouping = group_by_reachability(regions)
            ok = _replan_groups(ws, grouping.groups, rank, pos, slots, blocked.occ, uniforms, H,
                                config.hindrance, config.balanced, threads, plans)
            stats.n_groups = len(grouping.groups)
            if ok.all():
                break
            stats.enlargements += 1
            mask = congestion_resolution(graph, mask, pos, config.d)
    stats.n_conflict_free_final = int(n - mask.sum())
    t4 = time.perf_counter()

    if config.cache_plans:
        ws.cache = plans
        ws.cache_ok = ~mask
        ws.cache_goal = goals.copy()
    stats.seconds = t4 - t0
    stats.timings = {"heuristic": t1 - t0, "individual": t2 - t1, "detect": t3 - t2, "replan": t4 - t3}
    return Movement(pos.copy(), plans[:, 1].copy())


def pibt_controller(instance: Instance, state: State, seed: int = 0, hindrance: bool = True,
                    balanced: bool = True, ws: Workspace | None = None, threads: int = 1) -> Movement:
    """Plain one-step PIBT over all agents, no finalized constraints."""
    graph = instance.graph
    ws = ws or Workspace(graph)
    pos = state.positions
    n = len(pos)
    if n == 0:
        return Movement(pos.copy(), pos.copy())
    slots = ws.prepare(pos, instance.goals, 1, threads)
    order = priority_order(np.arange(n), instance.elapsed, ws.distances(slots, pos))
    uniforms = _pibt_uniforms(seed, instance.t, n, 1, ws.n_cand)
    occ = np.full((2, graph.num_vertices), -1, dtype=np.int32)
    plans = np.empty((n, 2), dtype=np.int32)
    plans[:, 0] = pos
    now = np.full(graph.num_vertices, -1, dtype=np.int32)
    nxt = np.full(graph.num_vertices, -1, dtype=np.int32)
    t = ws.table
    ok = _pibt_group(order, 0, 1, pos, slots, t.dist, t.count, occ, uniforms, hindrance, balanced,
                     graph.indptr, graph.indices, ws.n_cand, now, nxt, plans)
    if not ok:  # unreachable without finalized constraints
        raise RuntimeError("PIBT failed without blocking constraints")
    return Movement(pos.copy(), plans[:, 1].copy())


class FicoController:
    def __init__(self, graph: GridGraph, config: PlannerConfig):
        self.config = config
        self.ws = Workspace(graph)
        self.last_stats: StepStats | None = None

    def plan(self, state: State, instance: Instance, t: int) -> Movement:
        self.last_stats = StepStats()
        return fico_step(instance, state, self.config, self.ws, self.last_stats)


class PibtController:
    def __init__(self, graph: GridGraph, config: PlannerConfig):
        self.config = config
        self.ws = Workspace(graph)
        self.last_stats: StepStats | None = None

    def plan(self, state: State, instance: Instance, t: int) -> Movement:
        c = self.config
        return pibt_controller(instance, state, c.seed, c.hindrance, c.balanced, self.ws, c.threads)


_WARM = False


def warmup() -> None:
    """Compile every kernel once on a toy instance so later timings exclude JIT work."""
    global _WARM
    if _WARM:
        return
    from .grid_world import build_graph, empty_grid_map, random_scenario

    graph = build_graph(empty_grid_map(4, 4))
    inst = Instance.from_scenario(graph, random_scenario(graph, 12, 0))
    state = State(inst.starts.copy())
    for cfg in (PlannerConfig(horizon=2), PlannerConfig(horizon=2, force_all_conflicting=True)):
        fico_step(inst, state, cfg, Workspace(graph))
    pibt_controller(inst, state)
    congestion_resolution(graph, np.ones(12, dtype=bool), state.positions, 1)
    _WARM = True
