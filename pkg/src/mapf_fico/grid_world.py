"""Grid maps, MovingAI map/scenario parsing and the reflexive graph used by planners."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

PASSABLE_CHARS = frozenset(".G")
BLOCKED_CHARS = frozenset("@TO")


class MapFormatError(ValueError):
    """Raised for malformed .map or .scen input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    passable: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise MapFormatError(f"invalid dimensions {self.width}x{self.height}")
        if self.passable.shape != (self.height, self.width):
            raise MapFormatError("passability mask does not match dimensions")

    @property
    def num_passable(self) -> int:
        return int(self.passable.sum())


@dataclass(frozen=True)
class ScenarioEntry:
    agent: int
    start: int
    goal: int


def parse_map(text: str) -> GridMap:
    """Parse MovingAI .map text (``type``/``height``/``width``/``map`` header, then rows)."""
    lines = text.splitlines()
    header: dict[str, str] = {}
    i = 0
    while i < len(lines):
        raw = lines[i].strip()
        i += 1
        if not raw:
            continue
        if raw.lower() == "map":
            break
        parts = raw.split()
        if len(parts) != 2 or parts[0].lower() not in ("type", "height", "width"):
            raise MapFormatError(f"unexpected header line {raw!r}", i)
        header[parts[0].lower()] = parts[1]
    else:
        raise MapFormatError("missing 'map' line", i)
    for key in ("type", "height", "width"):
        if key not in header:
            raise MapFormatError(f"missing '{key}' header", i)
    try:
        height, width = int(header["height"]), int(header["width"])
    except ValueError as exc:
        raise MapFormatError(f"non-integer dimension: {exc}", i) from None
    if height <= 0 or width <= 0:
        raise MapFormatError(f"invalid dimensions {width}x{height}", i)

    passable = np.zeros((height, width), dtype=bool)
    row = 0
    for lineno in range(i + 1, len(lines) + 1):
        raw = lines[lineno - 1].rstrip("\r\n")
        if not raw.strip():
            continue
        if row >= height:
            raise MapFormatError(f"more than {height} map rows (row {row + 1})", lineno)
        if len(raw) != width:
            raise MapFormatError(f"row {row + 1} has {len(raw)} cells, expected {width}", lineno)
        for col, ch in enumerate(raw):
            if ch in PASSABLE_CHARS:
                passable[row, col] = True
            elif ch not in BLOCKED_CHARS:
                raise MapFormatError(f"unknown cell character {ch!r} at column {col}", lineno)
        row += 1
    if row != height:
        raise MapFormatError(f"expected {height} map rows, found {row}", len(lines))
    return GridMap(width, height, passable)


def format_map(gmap: GridMap) -> str:
    rows = ["".join("." if p else "@" for p in r) for r in gmap.passable]
    return "\n".join(["type octile", f"height {gmap.height}", f"width {gmap.width}", "map", *rows]) + "\n"


@dataclass(eq=False)
class GridGraph:
    """Reflexive directed graph in CSR form; waiting at any vertex is always legal.

    Neighbor lists never contain the vertex itself and are sorted by vertex id.
    ``coords`` maps vertex id -> (x, y) for grid-built graphs and is ``None`` otherwise.
    """

    indptr: np.ndarray
    indices: np.ndarray
    width: int = 0
    height: int = 0
    coords: np.ndarray | None = None
    cell_to_vertex: np.ndarray | None = None  # (height, width) -> id or -1
    is_grid: bool = False
    reverse_edge: np.ndarray = field(init=False, repr=False)
    component: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int32)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        n = self.num_vertices
        if n == 0:
            raise GraphError("graph has no vertices")
        src = np.repeat(np.arange(n, dtype=np.int32), np.diff(self.indptr))
        # position of (v -> u) for every edge (u -> v); -1 when the graph is not symmetric
        lookup = {(int(u), int(v)): k for k, (u, v) in enumerate(zip(src, self.indices))}
        self.reverse_edge = np.array(
            [lookup.get((int(v), int(u)), -1) for u, v in zip(src, self.indices)], dtype=np.int32
        )
        adj = csr_matrix((np.ones(len(self.indices)), self.indices, self.indptr), shape=(n, n))
        _, labels = connected_components(adj, directed=True, connection="strong")
        self.component = labels.astype(np.int32)

    @classmethod
    def from_adjacency(cls, neighbors: Sequence[Iterable[int]]) -> "GridGraph":
        """Build a generic graph from per-vertex neighbor lists (self-loops are dropped)."""
        indptr = [0]
        indices: list[int] = []
        for v, nbrs in enumerate(neighbors):
            clean = sorted({int(u) for u in nbrs if int(u) != v})
            if any(u < 0 or u >= len(neighbors) for u in clean):
                raise GraphError(f"vertex {v} has out-of-range neighbor")
            indices.extend(clean)
            indptr.append(len(indices))
        return cls(np.array(indptr), np.array(indices, dtype=np.int32))

    @property
    def num_vertices(self) -> int:
        return len(self.indptr) - 1

    @property
    def max_degree(self) -> int:
        return int(np.diff(self.indptr).max(initial=0))

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def vertex(self, x: int, y: int) -> int:
        if self.cell_to_vertex is None:
            raise GraphError("graph has no grid coordinates")
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise GraphError(f"({x}, {y}) is out of bounds")
        v = int(self.cell_to_vertex[y, x])
        if v < 0:
            raise GraphError(f"({x}, {y}) is blocked")
        return v

    def xy(self, v: int) -> tuple[int, int]:
        if self.coords is None:
            raise GraphError("graph has no grid coordinates")
        x, y = self.coords[v]
        return int(x), int(y)

    def adjacent(self, u: int, v: int) -> bool:
        return u == v or bool(np.any(self.neighbors(u) == v))

    def component_vertices(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.component == self.component[v]).astype(np.int32)

    def largest_component(self) -> np.ndarray:
        counts = np.bincount(self.component)
        return np.flatnonzero(self.component == counts.argmax()).astype(np.int32)

    def to_gridmap(self) -> GridMap:
        if self.cell_to_vertex is None:
            raise GraphError("graph has no grid coordinates")
        return GridMap(self.width, self.height, self.cell_to_vertex >= 0)

    def ball_size_bound(self, radius: int) -> int:
        """Upper bound on vertices within ``radius`` hops of any vertex."""
        if self.is_grid:
            bound = 2 * radius * radius + 2 * radius + 1
        else:
            bound = (self.max_degree + 1) ** radius
        return int(min(bound, self.num_vertices))


def build_graph(gmap: GridMap) -> GridGraph:
    """4-connected graph over passable cells, vertex ids dense in row-major order."""
    if gmap.num_passable == 0:
        raise GraphError("map has no passable cell")
    cell_to_vertex = np.full((gmap.height, gmap.width), -1, dtype=np.int32)
    ys, xs = np.nonzero(gmap.passable)
    cell_to_vertex[ys, xs] = np.arange(len(ys), dtype=np.int32)
    indptr = [0]
    indices: list[int] = []
    # up, left, right, down keeps neighbor ids ascending under row-major numbering
    for y, x in zip(ys, xs):
        for dx, dy in ((0, -1), (-1, 0), (1, 0), (0, 1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < gmap.width and 0 <= ny < gmap.height and cell_to_vertex[ny, nx] >= 0:
                indices.append(int(cell_to_vertex[ny, nx]))
        indptr.append(len(indices))
    return GridGraph(
        np.array(indptr),
        np.array(indices, dtype=np.int32),
        width=gmap.width,
        height=gmap.height,
        coords=np.stack([xs, ys], axis=1).astype(np.int32),
        cell_to_vertex=cell_to_vertex,
        is_grid=True,
    )


def parse_scenario(text: str, gmap: GridMap) -> list[ScenarioEntry]:
    """Parse MovingAI .scen text; coordinates become vertex ids of ``build_graph(gmap)``."""
    cell_to_vertex = np.full((gmap.height, gmap.width), -1, dtype=np.int64)
    ys, xs = np.nonzero(gmap.passable)
    cell_to_vertex[ys, xs] = np.arange(len(ys))
    entries: list[ScenarioEntry] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.lower().startswith("version"):
            continue
        parts = line.split()
        if len(parts) != 9:
            raise MapFormatError(f"expected 9 fields, got {len(parts)}", lineno)
        try:
            sx, sy, gx, gy = (int(p) for p in parts[4:8])
        except ValueError:
            raise MapFormatError("non-integer coordinate", lineno) from None
        vertices = []
        for x, y, what in ((sx, sy, "start"), (gx, gy, "goal")):
            if not (0 <= x < gmap.width and 0 <= y < gmap.height):
                raise MapFormatError(f"{what} ({x}, {y}) out of bounds", lineno)
            if cell_to_vertex[y, x] < 0:
                raise MapFormatError(f"{what} ({x}, {y}) is on a blocked cell", lineno)
            vertices.append(int(cell_to_vertex[y, x]))
        entries.append(ScenarioEntry(len(entries), vertices[0], vertices[1]))
    return entries


def format_scenario(entries: Sequence[ScenarioEntry], graph: GridGraph, map_name: str = "map") -> str:
    lines = ["version 1"]
    for e in entries:
        sx, sy = graph.xy(e.start)
        gx, gy = graph.xy(e.goal)
        lines.append(f"0\t{map_name}\t{graph.width}\t{graph.height}\t{sx}\t{sy}\t{gx}\t{gy}\t0")
    return "\n".join(lines) + "\n"


def empty_grid_map(width: int, height: int) -> GridMap:
    return GridMap(width, height, np.ones((height, width), dtype=bool))


def random_grid_map(width: int, height: int, obstacle_ratio: float, seed: int = 0) -> GridMap:
    """Uniformly scattered obstacles covering ``round(ratio * cells)`` cells."""
    rng = np.random.default_rng(seed)
    cells = width * height
    blocked = rng.choice(cells, size=int(round(obstacle_ratio * cells)), replace=False)
    passable = np.ones(cells, dtype=bool)
    passable[blocked] = False
    return GridMap(width, height, passable.reshape(height, width))


# Seeded stand-ins for MovingAI benchmark maps that are not shipped with the package.
BUILTIN_MAPS = {
    "empty-8-8": lambda: empty_grid_map(8, 8),
    "empty-16-16": lambda: empty_grid_map(16, 16),
    "empty-48-48": lambda: empty_grid_map(48, 48),
    "random-64-64-10": lambda: random_grid_map(64, 64, 0.10, seed=20240610),
}


def load_map(name_or_path: str) -> GridMap:
    if name_or_path in BUILTIN_MAPS:
        return BUILTIN_MAPS[name_or_path]()
    with open(name_or_path, encoding="utf-8") as fh:
        return parse_map(fh.read())


def random_scenario(graph: GridGraph, n_agents: int, seed: int) -> list[ScenarioEntry]:
    """Distinct uniform starts and distinct uniform goals inside the largest component."""
    cells = graph.largest_component()
    if n_agents > len(cells):
        raise ValueError(f"{n_agents} agents do not fit in {len(cells)} connected cells")
    rng = np.random.default_rng(seed)
    starts = rng.choice(cells, size=n_agents, replace=False)
    goals = rng.choice(cells, size=n_agents, replace=False)
    return [ScenarioEntry(i, int(s), int(g)) for i, (s, g) in enumerate(zip(starts, goals))]
