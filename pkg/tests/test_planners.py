import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from mapf_fico.conflict_engine import SpaceTimeHash
from mapf_fico.grid_world import build_graph, empty_grid_map, random_grid_map, random_scenario
from mapf_fico.planners import (
    PlannerConfig,
    StepStats,
    Workspace,
    _individual_uniforms,
    _pibt_uniforms,
    congestion_resolution,
    fico_step,
    individual_plan,
    individual_plans,
    pibt_controller,
    pibt_step,
    priorities_computation,
    priority_order,
    replan_group,
)
from mapf_fico.system_model import GoalStreams, Instance, Movement, State
from oracles import bfs_distances, grid, naive_conflicts, shortest_paths, trace_violations


def step_ok(graph, src, dst):
    return not trace_violations([np.asarray(src), np.asarray(dst)], graph)


def test_individual_arrives_then_waits():
    g = build_graph(empty_grid_map(5, 1))
    inst = Instance(g, [0, 4], [2, 4])
    plans = individual_plan(inst, State(inst.starts), 3)
    assert plans[0].tolist() == [0, 1, 2, 2]
    assert plans[1].tolist() == [4, 4, 4, 4]


def test_individual_rollouts_uniform(open3):
    ws = Workspace(open3)
    n = 10_000
    pos = np.full(n, open3.vertex(0, 0), dtype=np.int32)
    goals = np.full(n, open3.vertex(2, 2), dtype=np.int32)
    slots = ws.prepare(pos, goals, 4, 1)
    u = np.random.default_rng(3).random((n, 4))
    plans = individual_plans(ws, pos, slots, 4, u)
    paths = shortest_paths(open3, open3.vertex(0, 0), open3.vertex(2, 2))
    seen = Counter(tuple(r) for r in plans.tolist())
    assert set(seen) == set(paths)
    assert chisquare([seen[p] for p in paths]).pvalue > 0.001


def test_priority_rules():
    agents = np.arange(3)
    # elapsed dominates
    assert priority_order(agents, np.array([2, 5, 0]), np.zeros(3, int)).tolist() == [1, 0, 2]
    # all keys equal -> id order
    assert priority_order(agents, np.zeros(3, int), np.zeros(3, int)).tolist() == [0, 1, 2]
    # distance breaks elapsed ties
    assert priority_order(agents, np.zeros(3, int), np.array([1, 4, 4])).tolist() == [1, 2, 0]


def test_priority_resets_on_arrival():
    g = build_graph(empty_grid_map(4, 1))
    from mapf_fico.system_model import Environment

    inst = Instance(g, [0, 3], [1, 2], elapsed=np.array([5, 2]))
    _, nxt = Environment().step(Movement([0, 3], [1, 3]), inst)
    assert nxt.elapsed.tolist() == [0, 3]
    assert priorities_computation(nxt, [0, 1], State([1, 3])).tolist() == [1, 0]


def corridor2():
    return grid("........\n........")


def test_pibt_head_on_width2():
    g = corridor2()
    pos = np.array([g.vertex(2, 0), g.vertex(3, 0)], dtype=np.int32)
    goals = np.array([g.vertex(7, 0), g.vertex(0, 0)], dtype=np.int32)
    ws = Workspace(g)
    slots = ws.prepare(pos, goals, 1, 1)
    u = _pibt_uniforms(0, 0, 2, 1, ws.n_cand)
    for first, second in ((0, 1), (1, 0)):
        nxt = pibt_step(ws, [0, 1], pos, slots, np.array([first, second]), None, 0, u)
        assert nxt is not None and step_ok(g, pos, nxt)
        d = bfs_distances(g, int(goals[first]))
        assert d[int(nxt[first])] == d[int(pos[first])] - 1  # leader advances
        assert nxt[second] != pos[first]


def test_pibt_fails_when_boxed_in():
    g = build_graph(empty_grid_map(3, 3))
    c = g.vertex(1, 1)
    walls = g.neighbors(c)
    pos = np.concatenate([walls, [c]]).astype(np.int32)
    blocked = SpaceTimeHash.from_plans(np.repeat(pos[:, None], 2, axis=1), np.arange(4), g.num_vertices)
    blocked.occ[1, c] = 9  # a finalized agent also claims the center next step
    ws = Workspace(g)
    goals = pos.copy()
    goals[4] = g.vertex(0, 0)
    slots = ws.prepare(pos, goals, 1, 1)
    u = _pibt_uniforms(0, 0, 5, 1, ws.n_cand)
    assert pibt_step(ws, [4], pos, slots, np.array([4]), blocked, 0, u) is None
    res = replan_group(ws, [4], blocked, pos, slots, np.array([4]), 1, u)
    assert not res.ok and res.plans is None


def test_pibt_priorities_must_match_group(open3):
    ws = Workspace(open3)
    pos = np.array([0, 8], dtype=np.int32)
    slots = ws.prepare(pos, pos, 1, 1)
    with pytest.raises(ValueError):
        pibt_step(ws, [0, 1], pos, slots, np.array([0]), None, 0, _pibt_uniforms(0, 0, 2, 1, ws.n_cand))


def test_singleton_replan_follows_shortest_path():
    g = build_graph(empty_grid_map(6, 6))
    pos = np.array([g.vertex(0, 0)], dtype=np.int32)
    goals = np.array([g.vertex(2, 1)], dtype=np.int32)
    ws = Workspace(g)
    slots = ws.prepare(pos, goals, 5, 1)
    H = 5
    res = replan_group(ws, [0], SpaceTimeHash(g.num_vertices, H), pos, slots, np.array([0]), H,
                       _pibt_uniforms(1, 0, 1, H, ws.n_cand))
    assert res.ok
    assert tuple(res.plans[0, :4]) in set(shortest_paths(g, int(pos[0]), int(goals[0])))
    assert res.plans[0, 4:].tolist() == [goals[0]] * 2


def test_singleton_choice_is_balanced(open3):
    """Exponential race keys pick a candidate with probability c / sum(c)."""
    ws = Workspace(open3)
    pos = np.array([open3.vertex(1, 0)], dtype=np.int32)
    slots = ws.prepare(pos, np.array([open3.vertex(2, 2)], dtype=np.int32), 1, 1)
    seen = Counter()
    trials = 6000
    for s in range(trials):
        nxt = pibt_step(ws, [0], pos, slots, np.array([0]), None, 0, _pibt_uniforms(s, 0, 1, 1, ws.n_cand))
        seen[int(nxt[0])] += 1
    obs = [seen[open3.vertex(2, 0)], seen[open3.vertex(1, 1)]]
    assert sum(obs) == trials
    assert chisquare(obs, [trials / 3, 2 * trials / 3]).pvalue > 0.001


def test_crossing_pair_replanned_conflict_free():
    g = build_graph(empty_grid_map(5, 5))
    pos = np.array([g.vertex(0, 2), g.vertex(2, 0)], dtype=np.int32)
    goals = np.array([g.vertex(4, 2), g.vertex(2, 4)], dtype=np.int32)
    ws = Workspace(g)
    H = 4
    slots = ws.prepare(pos, goals, H, 1)
    res = replan_group(ws, [0, 1], SpaceTimeHash(g.num_vertices, H), pos, slots, np.array([0, 1]), H,
                       _pibt_uniforms(0, 0, 2, H, ws.n_cand))
    assert res.ok
    assert naive_conflicts(res.plans) == set()
    assert not trace_violations([res.plans[:, t] for t in range(H + 1)], g)


def test_congestion_examples():
    g = build_graph(empty_grid_map(10, 1))
    pos = np.array([0, 1, 5, 9], dtype=np.int32)
    mask = np.array([True, False, False, False])
    assert congestion_resolution(g, mask, pos, 1).tolist() == [True, True, False, False]
    assert congestion_resolution(g, mask, pos, 3).all()
    assert congestion_resolution(g, mask, pos, 10).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 7), st.integers(0, 10**6))
def test_congestion_iteration_bound(n, d, seed):
    g = build_graph(empty_grid_map(8, 8))
    rng = np.random.default_rng(seed)
    pos = rng.choice(64, size=n, replace=False).astype(np.int32)
    mask = np.zeros(n, dtype=bool)
    mask[rng.integers(n)] = True
    n_cf = int((~mask).sum())
    rounds = 0
    while not mask.all():
        new = congestion_resolution(g, mask, pos, d)
        assert (new & ~mask).sum() == min(d, int((~mask).sum()))
        mask = new
        rounds += 1
    assert rounds <= math.ceil(n_cf / d)


def test_conflict_free_agents_keep_individual_step():
    g = build_graph(empty_grid_map(10, 10))
    inst = Instance(g, [0, 99], [5, 90])
    cfg = PlannerConfig(horizon=3, seed=4)
    ws = Workspace(g)
    stats = StepStats()
    mv = fico_step(inst, State(inst.starts), cfg, ws, stats)
    plans = individual_plan(inst, State(inst.starts), 3, seed=4)
    assert mv.dst.tolist() == plans[:, 1].tolist()
    assert stats.cf_fraction == 1.0 and stats.iterations == 0


def test_single_agent_step():
    g = build_graph(empty_grid_map(4, 4))
    inst = Instance(g, [0], [15])
    for seed in range(10):
        mv = fico_step(inst, State(inst.starts), PlannerConfig(seed=seed))
        assert mv.dst[0] in (1, 4)
        mv = pibt_controller(inst, State(inst.starts), seed=seed)
        assert mv.dst[0] in (1, 4)


def test_pibt_prevents_swap():
    g = build_graph(empty_grid_map(2, 1))
    inst = Instance(g, [0, 1], [1, 0])
    mv = pibt_controller(inst, State(inst.starts))
    assert step_ok(g, mv.src, mv.dst)
    assert mv == pibt_controller(inst, State(inst.starts))


def test_head_on_corridor_one_yields():
    g = grid(".....\n@@.@@")
    inst = Instance(g, [g.vertex(1, 0), g.vertex(3, 0)], [g.vertex(4, 0), g.vertex(0, 0)])
    state = State(inst.starts)
    mv = fico_step(inst, state, PlannerConfig(horizon=3))
    assert step_ok(g, mv.src, mv.dst)


def random_instance(w, h, ratio, n, seed, lifelong=False):
    g = build_graph(random_grid_map(w, h, ratio, seed))
    n = min(n, len(g.largest_component()))
    ents = random_scenario(g, n, seed)
    return Instance.from_scenario(g, ents, GoalStreams(g, seed) if lifelong else None)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 9), st.integers(3, 9), st.integers(1, 25), st.integers(1, 4), st.integers(0, 10**6),
       st.booleans())
def test_fico_step_is_always_legal(w, h, n, H, seed, hindrance):
    inst = random_instance(w, h, 0.15, n, seed)
    state = State(inst.starts)
    cfg = PlannerConfig(horizon=H, seed=seed, hindrance=hindrance, d=2)
    mv = fico_step(inst, state, cfg)
    assert np.array_equal(mv.src, state.positions)
    assert step_ok(inst.graph, mv.src, mv.dst)
    assert step_ok(inst.graph, state.positions, pibt_controller(inst, state, seed=seed).dst)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 8), st.integers(3, 8), st.integers(2, 15), st.integers(1, 3), st.integers(0, 10**6))
def test_forced_fallback_equals_global_pibt(w, h, n, H, seed):
    inst = random_instance(w, h, 0.1, n, seed)
    state = State(inst.starts)
    cfg = PlannerConfig(horizon=H, seed=seed, force_all_conflicting=True)
    mv = fico_step(inst, state, cfg)
    assert mv == pibt_controller(inst, state, seed=seed)


def test_thread_count_does_not_change_result():
    inst = random_instance(32, 32, 0.1, 300, 2)
    state = State(inst.starts)
    outs = [fico_step(inst, state, PlannerConfig(seed=2, threads=k)) for k in (1, 3, 8)]
    assert outs[0] == outs[1] == outs[2]


def test_plan_cache_is_consistent():
    """Reusing cached conflict-free plans must still give legal, deterministic steps."""
    from mapf_fico.planners import FicoController
    from mapf_fico.system_model import Environment

    inst = random_instance(16, 16, 0.1, 60, 9)
    runs = []
    for _ in range(2):
        ctrl = FicoController(inst.graph, PlannerConfig(seed=9, cache_plans=True))
        env = Environment()
        cur, state = inst, State(inst.starts)
        seq = []
        for t in range(15):
            mv = ctrl.plan(state, cur, t)
            assert step_ok(inst.graph, mv.src, mv.dst)
            state, cur = env.step(mv, cur)
            seq.append(mv.dst.tolist())
        runs.append(seq)
    assert runs[0] == runs[1]


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(horizon=0)
    with pytest.raises(ValueError):
        PlannerConfig(d=0)


def test_empty_instance():
    g = build_graph(empty_grid_map(3, 3))
    inst = Instance(g, np.zeros(0, int), np.zeros(0, int))
    assert len(fico_step(inst, State(inst.starts), PlannerConfig()).dst) == 0
    assert len(pibt_controller(inst, State(inst.starts)).dst) == 0


def test_individual_uniform_shape():
    assert _individual_uniforms(0, 5, 7, 3).shape == (7, 3)
