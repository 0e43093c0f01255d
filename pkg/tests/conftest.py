import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mapf_fico.grid_world import build_graph, empty_grid_map  # noqa: E402
from oracles import grid  # noqa: E402


@pytest.fixture
def open3():
    return build_graph(empty_grid_map(3, 3))


@pytest.fixture
def hole3():
    return grid("...\n.@.\n...")
