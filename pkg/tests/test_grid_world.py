import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mapf_fico.grid_world import (
    GraphError,
    GridGraph,
    MapFormatError,
    ScenarioEntry,
    build_graph,
    empty_grid_map,
    format_map,
    format_scenario,
    load_map,
    parse_map,
    parse_scenario,
    random_scenario,
)
from oracles import grid_adjacency

MAP_4X4 = """type octile
height 4
width 4
map
....
.@..
....
....
"""


def test_parse_map_counts_passable():
    gm = parse_map(MAP_4X4)
    assert (gm.width, gm.height) == (4, 4)
    assert gm.num_passable == 15
    assert not gm.passable[1, 1]


def test_all_blocked_parses_but_graph_fails():
    gm = parse_map("type octile\nheight 2\nwidth 2\nmap\n@@\n@T\n")
    assert gm.num_passable == 0
    with pytest.raises(GraphError):
        build_graph(gm)


def test_extra_rows_report_line():
    text = "type octile\nheight 2\nwidth 3\nmap\n...\n...\n...\n"
    with pytest.raises(MapFormatError) as e:
        parse_map(text)
    assert e.value.line == 7
    assert "row 3" in str(e.value)


@pytest.mark.parametrize("text,line", [
    ("type octile\nheight x\nwidth 2\nmap\n..\n", 4),
    ("type octile\nheight 1\nwidth 3\nmap\n..\n", 5),
    ("type octile\nheight 1\nwidth 2\nmap\n.?\n", 5),
    ("height 1\nwidth 2\nmap\n..\n", 3),
    ("type octile\nheight 1\nwidth 2\nbogus 1\nmap\n..\n", 4),
])
def test_malformed_maps_name_the_line(text, line):
    with pytest.raises(MapFormatError) as e:
        parse_map(text)
    assert e.value.line == line


def test_scenario_coordinates_map_to_vertices():
    gm = empty_grid_map(4, 4)
    g = build_graph(gm)
    scen = "version 1\n0\tm.map\t4\t4\t0\t0\t3\t3\t6.0\n"
    (e,) = parse_scenario(scen, gm)
    assert e.start == g.vertex(0, 0) and e.goal == g.vertex(3, 3)


def test_empty_scenario():
    assert parse_scenario("", empty_grid_map(2, 2)) == []


def test_scenario_on_blocked_cell():
    gm = parse_map(MAP_4X4)
    scen = "version 1\n0\tm\t4\t4\t0\t0\t1\t0\t1\n0\tm\t4\t4\t1\t1\t0\t0\t2\n"
    with pytest.raises(MapFormatError) as e:
        parse_scenario(scen, gm)
    assert e.value.line == 3


def test_scenario_out_of_bounds_and_field_count():
    gm = empty_grid_map(2, 2)
    with pytest.raises(MapFormatError):
        parse_scenario("0\tm\t2\t2\t5\t0\t0\t0\t1\n", gm)
    with pytest.raises(MapFormatError):
        parse_scenario("0\tm\t2\t2\t0\t0\t0\n", gm)


def test_open3_degrees(open3):
    assert open3.num_vertices == 9
    assert len(open3.neighbors(open3.vertex(0, 0))) == 2
    assert len(open3.neighbors(open3.vertex(1, 1))) == 4


def test_single_cell():
    g = build_graph(empty_grid_map(1, 1))
    assert g.num_vertices == 1
    assert len(g.neighbors(0)) == 0
    assert g.max_degree == 0


def test_center_blocked(hole3):
    assert hole3.num_vertices == 8
    oracle = grid_adjacency(hole3.to_gridmap().passable)
    for (x, y), nb in oracle.items():
        v = hole3.vertex(x, y)
        assert {hole3.xy(int(w)) for w in hole3.neighbors(v)} == nb
        assert len(nb) == 2


def test_blocked_vertex_lookup(hole3):
    with pytest.raises(GraphError):
        hole3.vertex(1, 1)


def test_from_adjacency():
    g = GridGraph.from_adjacency([[1], [0, 2, 1], [1]])
    assert g.adjacent(0, 1) and not g.adjacent(0, 2)
    assert list(g.neighbors(1)) == [0, 2]  # self-loop dropped, waiting is implicit
    one_way = GridGraph.from_adjacency([[1], []])
    assert one_way.reverse_edge[0] == -1
    assert one_way.component[0] != one_way.component[1]
    with pytest.raises(GraphError):
        GridGraph.from_adjacency([[3], []])


def test_builtin_maps():
    gm = load_map("random-64-64-10")
    assert (gm.width, gm.height) == (64, 64)
    assert gm.num_passable == 64 * 64 - round(0.1 * 64 * 64)
    assert load_map("empty-8-8").num_passable == 64


def test_random_scenario_distinct_and_connected():
    g = build_graph(load_map("random-64-64-10"))
    ents = random_scenario(g, 300, 4)
    starts = [e.start for e in ents]
    goals = [e.goal for e in ents]
    assert len(set(starts)) == 300 and len(set(goals)) == 300
    big = g.component[g.largest_component()[0]]
    assert all(g.component[s] == big and g.component[t] == big for s, t in zip(starts, goals))
    assert random_scenario(g, 300, 4) == ents


masks = arrays(np.bool_, st.tuples(st.integers(1, 7), st.integers(1, 7)))


@settings(max_examples=80, deadline=None)
@given(masks)
def test_map_roundtrip(mask):
    from mapf_fico.grid_world import GridMap

    gm = GridMap(mask.shape[1], mask.shape[0], mask)
    back = parse_map(format_map(gm))
    assert np.array_equal(back.passable, mask)


@settings(max_examples=80, deadline=None)
@given(masks)
def test_graph_matches_brute_force_adjacency(mask):
    if not mask.any():
        return
    from mapf_fico.grid_world import GridMap

    g = build_graph(GridMap(mask.shape[1], mask.shape[0], mask))
    oracle = grid_adjacency(mask)
    assert g.num_vertices == len(oracle)
    for v in range(g.num_vertices):
        nb = g.neighbors(v)
        assert list(nb) == sorted(nb)
        assert {g.xy(int(w)) for w in nb} == oracle[g.xy(v)]
        for k, w in enumerate(nb):
            e = g.indptr[v] + k
            r = g.reverse_edge[e]
            assert g.indices[r] == v and g.indptr[w] <= r < g.indptr[w + 1]


@settings(max_examples=40, deadline=None)
@given(masks, st.integers(0, 10))
def test_scenario_roundtrip(mask, seed):
    if not mask.any():
        return
    from mapf_fico.grid_world import GridMap

    gm = GridMap(mask.shape[1], mask.shape[0], mask)
    g = build_graph(gm)
    n = min(3, len(g.largest_component()))
    ents = random_scenario(g, n, seed)
    back = parse_scenario(format_scenario(ents, g), gm)
    assert [(e.start, e.goal) for e in back] == [(e.start, e.goal) for e in ents]
    assert all(isinstance(e, ScenarioEntry) for e in back)
