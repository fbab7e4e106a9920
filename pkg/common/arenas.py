from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from common.errors import ConfigError, ParseError
from common.types import ArenaName, to_enum

"""
Arena maps are plain-text grids, one character per cell of size 1x1:

  .      free cell
  A      free cell, agent spawn (cell center)
  T      free cell, fixed target (cell center)
  #      wall with color 0
  0-9    wall with the given color index
  ;      comment line

Row 0 is the first grid line. A cell (row, col) covers x in [col, col+1] and y in [row, row+1].
Cells outside the grid are walls.
"""

MAPS_FOLDER = Path(__file__).parent / "maps"

FREE = -1

# Wall colors. Pure green is reserved for the target.
PALETTE = np.array([
    [0.50, 0.50, 0.50],
    [0.80, 0.20, 0.20],
    [0.20, 0.30, 0.85],
    [0.85, 0.75, 0.20],
    [0.65, 0.25, 0.70],
    [0.90, 0.50, 0.15],
    [0.20, 0.70, 0.75],
    [0.95, 0.95, 0.95],
    [0.45, 0.30, 0.15],
    [0.90, 0.55, 0.65],
])


@dataclass(frozen=True, eq=False)
class Arena:
    name: str
    walls: np.ndarray  # (rows, cols) wall color index or FREE
    spawn: tuple  # (x, y) agent spawn position
    target: tuple = None  # (x, y) fixed target or None for randomly spawned targets

    @property
    def shape(self):
        return self.walls.shape

    def is_wall_cell(self, row, col):
        rows, cols = self.walls.shape
        if row < 0 or col < 0 or row >= rows or col >= cols:
            return True
        return self.walls[row, col] != FREE

    def wall_color(self, row, col):
        rows, cols = self.walls.shape
        if row < 0 or col < 0 or row >= rows or col >= cols:
            return 0
        return int(self.walls[row, col])

    def free_cells(self):
        rows, cols = np.nonzero(self.walls == FREE)
        return list(zip(rows.tolist(), cols.tolist()))

    def colors(self):
        return sorted(set(int(c) for c in np.unique(self.walls) if c != FREE))

    def center(self):
        rows, cols = self.walls.shape
        return (cols / 2.0, rows / 2.0)

    def wall_segments(self):
        """Boundaries between wall and free cells as ((x0, y0), (x1, y1), color)."""
        segments = []
        for row, col in self.free_cells():
            for d_row, d_col, a, b in (
                (-1, 0, (col, row), (col + 1, row)),
                (1, 0, (col, row + 1), (col + 1, row + 1)),
                (0, -1, (col, row), (col, row + 1)),
                (0, 1, (col + 1, row), (col + 1, row + 1)),
            ):
                if self.is_wall_cell(row + d_row, col + d_col):
                    segments.append((a, b, self.wall_color(row + d_row, col + d_col)))
        return segments


def parse_arena(text: str, name="arena") -> Arena:
    grid = []
    spawn = None
    target = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip()
        if not line or line.startswith(";"):
            continue
        row = len(grid)
        cells = []
        for col, ch in enumerate(line):
            if ch in ".AT":
                cells.append(FREE)
                if ch == "A":
                    if spawn is not None:
                        raise ParseError(f"Arena '{name}' has more than one agent spawn", line=line_no)
                    spawn = (col + 0.5, row + 0.5)
                elif ch == "T":
                    if target is not None:
                        raise ParseError(f"Arena '{name}' has more than one target", line=line_no)
                    target = (col + 0.5, row + 0.5)
            elif ch == "#":
                cells.append(0)
            elif ch.isdigit():
                cells.append(int(ch))
            else:
                raise ParseError(f"Unknown arena character '{ch}'", line=line_no)
        if grid and len(cells) != len(grid[0]):
            raise ParseError(f"Arena rows must have equal length ({len(cells)} != {len(grid[0])})", line=line_no)
        grid.append(cells)

    if not grid:
        raise ParseError(f"Arena '{name}' is empty")

    walls = np.array(grid, dtype=np.int64)
    walls.setflags(write=False)
    if not np.any(walls == FREE):
        raise ParseError(f"Arena '{name}' has no free cells")

    if spawn is None:
        rows, cols = walls.shape
        spawn = (cols / 2.0, rows / 2.0)

    return Arena(name=name, walls=walls, spawn=spawn, target=target)


def load_arena(path) -> Arena:
    path = Path(path)
    return parse_arena(path.read_text(encoding="utf-8"), name=path.stem)


@lru_cache(maxsize=None)
def get_arena(name) -> Arena:
    arena_name = to_enum(ArenaName, name)
    path = MAPS_FOLDER / f"{arena_name.value}.txt"
    if not path.is_file():
        raise ConfigError(f"No map file for arena '{arena_name.value}'")
    return load_arena(path)


def count_interior_corners(arena: Arena) -> int:
    """Number of reflex corners of the free space: 2x2 windows with exactly one wall cell."""
    free = (arena.walls == FREE).astype(int)
    windows = free[:-1, :-1] + free[1:, :-1] + free[:-1, 1:] + free[1:, 1:]
    return int(np.sum(windows == 3))


def cell_of(pos):
    return int(np.floor(pos[1])), int(np.floor(pos[0]))


def bfs_distances(arena: Arena, start_cell) -> dict:
    """Grid-step distances from start_cell to every reachable free cell (4-connectivity)."""
    dist = {start_cell: 0}
    queue = deque([start_cell])
    while queue:
        row, col = queue.popleft()
        for d_row, d_col in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (row + d_row, col + d_col)
            if nxt in dist or arena.is_wall_cell(*nxt):
                continue
            dist[nxt] = dist[(row, col)] + 1
            queue.append(nxt)
    return dist


def furthest_free_cell(arena: Arena, start_cell=None):
    if start_cell is None:
        start_cell = cell_of(arena.spawn)
    dist = bfs_distances(arena, start_cell)
    # Ties are broken by cell order for a seed-independent answer
    return max(sorted(dist), key=lambda c: dist[c])


def shortest_path(arena: Arena, start_cell, goal_cell):
    """List of cells from start to goal (inclusive) or None if unreachable."""
    prev = {start_cell: None}
    queue = deque([start_cell])
    while queue:
        cell = queue.popleft()
        if cell == goal_cell:
            break
        row, col = cell
        for d_row, d_col in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (row + d_row, col + d_col)
            if nxt in prev or arena.is_wall_cell(*nxt):
                continue
            prev[nxt] = cell
            queue.append(nxt)
    if goal_cell not in prev:
        return None
    path = []
    cell = goal_cell
    while cell is not None:
        path.append(cell)
        cell = prev[cell]
    return path[::-1]
