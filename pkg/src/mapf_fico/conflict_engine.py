"""Horizon-limited conflict detection and reachability grouping.

Space-time cells are packed as ``tau * V + v``; directed edges are CSR edge ids so the
reverse direction of an edge is one array lookup (``GridGraph.reverse_edge``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _parallel
from .grid_world import GridGraph

FREE = -1


@dataclass
class Partition:
    conflict_free: np.ndarray  # sorted agent ids
    conflicting: np.ndarray

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "Partition":
        return cls(np.flatnonzero(~mask).astype(np.int64), np.flatnonzero(mask).astype(np.int64))


class SpaceTimeHash:
    """Occupancy of finalized plans: ``occ[tau, v]`` is the agent at ``v`` at ``tau`` or -1."""

    def __init__(self, num_vertices: int, horizon: int):
        self.occ = np.full((horizon + 1, num_vertices), FREE, dtype=np.int32)

    @classmethod
    def from_plans(cls, plans: np.ndarray, agents: np.ndarray, num_vertices: int) -> "SpaceTimeHash":
        h = cls(num_vertices, plans.shape[1] - 1)
        if len(agents):
            taus = np.arange(plans.shape[1])
            h.occ[taus[None, :], plans[agents]] = np.asarray(agents, dtype=np.int32)[:, None]
        return h

    @property
    def horizon(self) -> int:
        return self.occ.shape[0] - 1

    def occupant(self, v: int, tau: int) -> int:
        return int(self.occ[tau, v])

    def __len__(self) -> int:
        return int(np.count_nonzero(self.occ != FREE))


@njit(cache=True, nogil=True)
def _edge_id(u, w, indptr, indices):
    for k in range(indptr[u], indptr[u + 1]):
        if indices[k] == w:
            return k
    return -1


@njit(cache=True, nogil=True)
def _detect_kernel(plans, num_vertices, indptr, indices, reverse_edge, out):
    n, length = plans.shape
    horizon = length - 1
    # vertex hash: chained buckets per space-time cell
    head = np.full(length * num_vertices, -1, dtype=np.int64)
    nxt = np.full(n * length, -1, dtype=np.int64)
    for tau in range(length):
        for a in range(n):
            key = tau * num_vertices + plans[a, tau]
            slot = a * length + tau
            other = head[key]
            if other >= 0:
                out[a] = True
                while other >= 0:
                    out[other // length] = True
                    other = nxt[other]
            nxt[slot] = head[key]
            head[key] = slot
    # edge hash over directed moves, probed with the reverse edge id
    n_edges = len(indices)
    if horizon == 0 or n_edges == 0:
        return
    ehash = np.full(horizon * n_edges, -1, dtype=np.int64)
    eid = np.full((n, horizon), -1, dtype=np.int64)
    for tau in range(horizon):
        for a in range(n):
            u = plans[a, tau]
            w = plans[a, tau + 1]
            if u != w:
                e = _edge_id(u, w, indptr, indices)
                eid[a, tau] = e
                if e >= 0:
                    ehash[tau * n_edges + e] = a
    for tau in range(horizon):
        for a in range(n):
            e = eid[a, tau]
            if e >= 0:
                r = reverse_edge[e]
                if r >= 0:
                    b = ehash[tau * n_edges + r]
                    if b >= 0:
                        out[a] = True
                        out[b] = True


def detect_conflicts(plans: np.ndarray, graph: GridGraph) -> Partition:
    """Split agents by whether their plans collide with anybody over the horizon."""
    plans = np.ascontiguousarray(plans, dtype=np.int32)
    mask = np.zeros(len(plans), dtype=np.bool_)
    if len(plans):
        _detect_kernel(plans, graph.num_vertices, graph.indptr, graph.indices, graph.reverse_edge, mask)
    return Partition.from_mask(mask)


def conflict_mask(plans: np.ndarray, graph: GridGraph) -> np.ndarray:
    mask = np.zeros(len(plans), dtype=np.bool_)
    if len(plans):
        _detect_kernel(plans, graph.num_vertices, graph.indptr, graph.indices, graph.reverse_edge, mask)
    return mask


@njit(cache=True, nogil=True)
def move_blocked(u, w, tau, occ):
    """True if moving u -> w over tau -> tau+1 hits a finalized plan."""
    if occ[tau + 1, w] != -1:
        return True
    c = occ[tau, w]
    return c != -1 and w != u and occ[tau + 1, u] == c


@njit(cache=True, nogil=True)
def _regions_kernel(agents, positions, lo, hi, horizon, occ, indptr, indices, cells, lengths):
    num_vertices = occ.shape[1]
    stamp = np.zeros(num_vertices, dtype=np.int64)
    mark = 0
    cur = np.empty(num_vertices, dtype=np.int32)
    new = np.empty(num_vertices, dtype=np.int32)
    for i in range(lo, hi):
        v0 = positions[agents[i]]
        cells[i, 0] = v0
        m = 1
        cur[0] = v0
        ncur = 1
        for tau in range(horizon):
            mark += 1
            nnew = 0
            for j in range(ncur):
                u = cur[j]
                for k in range(indptr[u], indptr[u + 1] + 1):
                    w = u if k == indptr[u + 1] else indices[k]
                    if stamp[w] == mark or move_blocked(u, w, tau, occ):
                        continue
                    stamp[w] = mark
                    new[nnew] = w
                    nnew += 1
                    cells[i, m] = (tau + 1) * num_vertices + w
                    m += 1
            cur, new = new, cur
            ncur = nnew
        lengths[i] = m


@dataclass
class ReachableRegions:
    """Packed space-time regions; row ``i`` belongs to ``agents[i]``."""

    agents: np.ndarray
    cells: np.ndarray  # (n, capacity) of tau * V + v, valid up to lengths[i]
    lengths: np.ndarray
    num_vertices: int
    horizon: int

    def cells_of(self, i: int) -> np.ndarray:
        return self.cells[i, : self.lengths[i]]

    def as_sets(self) -> dict[int, set[tuple[int, int]]]:
        """agent -> {(vertex, tau)}; for inspection and tests."""
        V = self.num_vertices
        return {int(a): {(int(k % V), int(k // V)) for k in self.cells_of(i)} for i, a in enumerate(self.agents)}

    @property
    def total_cells(self) -> int:
        return int(self.lengths.sum())


def region_capacity(graph: GridGraph, horizon: int) -> int:
    return sum(graph.ball_size_bound(tau) for tau in range(horizon + 1))


def compute_reachable_sets(
    graph: GridGraph,
    conflicting: np.ndarray,
    positions: np.ndarray,
    horizon: int,
    blocked: SpaceTimeHash,
    threads: int = 1,
) -> ReachableRegions:
    """Depth-``horizon`` space-time BFS per agent that avoids finalized cells and swaps."""
    agents = np.asarray(conflicting, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int32)
    if blocked.horizon < horizon:
        raise ValueError("blocked hash is shorter than the horizon")
    cap = region_capacity(graph, horizon)
    cells = np.empty((len(agents), cap), dtype=np.int64)
    lengths = np.zeros(len(agents), dtype=np.int64)
    occ = blocked.occ

    def work(lo, hi):
        _regions_kernel(agents, positions, lo, hi, horizon, occ, graph.indptr, graph.indices, cells, lengths)

    _parallel.run_chunks(work, _parallel.split_even(len(agents), threads), threads)
    return ReachableRegions(agents, cells, lengths, graph.num_vertices, horizon)


class DisjointSetUnion:
    """Union by rank with path compression; ``ops`` counts find and union calls."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.rank = np.zeros(n, dtype=np.int8)
        self.ops = np.zeros(1, dtype=np.int64)

    def find(self, x: int) -> int:
        self.ops[0] += 1
        return int(_find(self.parent, x))

    def union(self, a: int, b: int) -> bool:
        self.ops[0] += 1
        return bool(_union(self.parent, self.rank, a, b))


@njit(cache=True, nogil=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True, nogil=True)
def _union(parent, rank, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return False
    if rank[ra] < rank[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    if rank[ra] == rank[rb]:
        rank[ra] += 1
    return True


@njit(cache=True, nogil=True)
def _group_kernel(cells, lengths, n_keys, parent, rank, ops):
    n = len(lengths)
    owner = np.full(n_keys, -1, dtype=np.int64)
    for i in range(n):
        for j in range(lengths[i]):
            key = cells[i, j]
            o = owner[key]
            if o == -1:
                owner[key] = i
            elif o != i:
                ops[0] += 1
                _union(parent, rank, i, o)
    # rows are in ascending agent order, so first-seen root order = min-member order
    root_group = np.full(n, -1, dtype=np.int64)
    group_of = np.empty(n, dtype=np.int64)
    n_groups = 0
    for i in range(n):
        ops[0] += 1
        r = _find(parent, i)
        if root_group[r] == -1:
            root_group[r] = n_groups
            n_groups += 1
        group_of[i] = root_group[r]
    return group_of, n_groups


@dataclass
class Grouping:
    groups: list[np.ndarray]  # agent ids ascending; groups ordered by min member
    dsu_ops: int
    total_cells: int


def group_by_reachability(regions: ReachableRegions) -> Grouping:
    """Connected components of agents whose regions share a space-time cell."""
    n = len(regions.agents)
    if n == 0:
        return Grouping([], 0, 0)
    if np.any(np.diff(regions.agents) <= 0):
        raise ValueError("region rows must be in ascending agent order")
    dsu = DisjointSetUnion(n)
    n_keys = (regions.horizon + 1) * regions.num_vertices
    group_of, n_groups = _group_kernel(regions.cells, regions.lengths, n_keys, dsu.parent, dsu.rank, dsu.ops)
    order = np.argsort(group_of, kind="stable")
    bounds = np.searchsorted(group_of[order], np.arange(n_groups + 1))
    groups = [regions.agents[order[bounds[g] : bounds[g + 1]]] for g in range(n_groups)]
    return Grouping(groups, int(dsu.ops[0]), regions.total_cells)
