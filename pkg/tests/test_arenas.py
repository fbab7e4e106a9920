import pytest
import numpy as np

from common.errors import *
from common.arenas import *


def test_shipped_maps():
    box5 = get_arena("box5")
    box9 = get_arena("box9")
    assert len(box5.free_cells()) == 25
    assert len(box9.free_cells()) == 81
    assert box5.target is None and box9.target is None
    assert box5.spawn == (3.5, 3.5)

    lmaze = get_arena("lmaze")
    smaze = get_arena("smaze")
    assert lmaze.target is not None and smaze.target is not None


def test_interior_corners():
    assert count_interior_corners(get_arena("box5")) == 0
    assert count_interior_corners(get_arena("lmaze")) == 1
    assert count_interior_corners(get_arena("smaze")) == 2


def test_wall_colors_increase():
    counts = [len(get_arena(name).colors()) for name in ("box5", "lmaze", "smaze")]
    assert counts[0] < counts[1] < counts[2]


def test_maze_target_is_furthest_cell():
    for name in ("lmaze", "smaze"):
        arena = get_arena(name)
        row, col = furthest_free_cell(arena)
        assert arena.target == (col + 0.5, row + 0.5)


def test_shortest_path():
    arena = get_arena("lmaze")
    start = cell_of(arena.spawn)
    goal = cell_of(arena.target)
    path = shortest_path(arena, start, goal)

    assert path[0] == start and path[-1] == goal
    assert len(path) - 1 == bfs_distances(arena, start)[goal]
    for a, b in zip(path, path[1:]):
        assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
        assert not arena.is_wall_cell(*b)


def test_outside_is_wall():
    arena = get_arena("box5")
    assert arena.is_wall_cell(-1, 3)
    assert arena.is_wall_cell(3, 100)
    assert not arena.is_wall_cell(3, 3)


def test_wall_segments_enclose_box():
    arena = get_arena("box5")
    segments = arena.wall_segments()
    # 5 unit segments per side
    assert len(segments) == 20
    assert {color for _, _, color in segments} == {1, 2, 3, 4}


def test_parse_errors():
    with pytest.raises(ParseError) as e:
        parse_arena("###\n#x#\n###")
    assert e.value.line == 2

    with pytest.raises(ParseError) as e:
        parse_arena("; comment\n####\n#..\n####")
    assert e.value.line == 3

    with pytest.raises(ParseError):
        parse_arena("#A#\n#A#")

    with pytest.raises(ParseError):
        parse_arena("###\n###")

    with pytest.raises(ParseError):
        parse_arena("; nothing here\n")


def test_parse_default_spawn():
    arena = parse_arena("####\n#..#\n#..#\n####")
    assert arena.spawn == (2.0, 2.0)
    assert arena.colors() == [0]


def test_unknown_arena():
    with pytest.raises(ConfigError):
        get_arena("tunnel")

    pass
