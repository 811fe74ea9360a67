import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prunebench.grid import (
    Coord,
    GridError,
    GridMap,
    SceneFormatError,
    neighbors,
    parse_scene,
    path_cost,
    serialize_scene,
    verify_path,
)
from prunebench.scenarios import DEFAULT_FAMILIES, generate_scene, label_scene


def test_neighbors_corner_has_east_and_south():
    g = GridMap.empty(3, 3, (0, 0), (2, 2))
    assert set(neighbors(g, (0, 0))) == {(0, 1), (1, 0)}
    assert neighbors(g, (0, 0)) == [(0, 1), (1, 0)]


def test_neighbors_interior_order():
    g = GridMap.empty(3, 3, (0, 0), (2, 2))
    assert neighbors(g, (1, 1)) == [(0, 1), (1, 2), (2, 1), (1, 0)]


def test_neighbors_skip_blocked():
    blocked = np.zeros((3, 3), bool)
    blocked[1, 2] = True
    g = GridMap(blocked, (0, 0), (2, 2))
    assert neighbors(g, (1, 1)) == [(0, 1), (2, 1), (1, 0)]


def test_neighbors_eight_order():
    g = GridMap.empty(3, 3, (0, 0), (2, 2), connectivity=8)
    assert neighbors(g, (1, 1)) == [(0, 1), (1, 2), (2, 1), (1, 0), (0, 2), (2, 2), (2, 0), (0, 0)]


def test_neighbors_out_of_bounds():
    g = GridMap.empty(3, 3, (0, 0), (2, 2))
    with pytest.raises(GridError):
        neighbors(g, (3, 0))


@st.composite
def maps(draw, max_side=9):
    h = draw(st.integers(2, max_side))
    w = draw(st.integers(2, max_side))
    conn = draw(st.sampled_from([4, 8]))
    cells = draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
    blocked = np.array(cells, bool).reshape(h, w)
    free = np.argwhere(~blocked)
    if len(free) == 0:
        blocked[0, 0] = False
        free = np.argwhere(~blocked)
    i = draw(st.integers(0, len(free) - 1))
    j = draw(st.integers(0, len(free) - 1))
    return GridMap(blocked, tuple(free[i]), tuple(free[j]), conn)


@given(maps(), st.data())
def test_neighbors_free_in_bounds_deterministic(g, data):
    r = data.draw(st.integers(0, g.height - 1))
    c = data.draw(st.integers(0, g.width - 1))
    out = neighbors(g, (r, c))
    assert out == neighbors(g, (r, c))
    for cell in out:
        assert g.in_bounds(cell) and not g.blocked[cell]
        assert max(abs(cell[0] - r), abs(cell[1] - c)) == 1


def test_verify_identity_path():
    g = GridMap.empty(3, 3, (1, 1), (1, 1))
    assert verify_path(g, [(1, 1)])


def test_verify_rejects_diagonal_on_four():
    g = GridMap.empty(3, 3, (0, 0), (1, 1))
    check = verify_path(g, [(0, 0), (1, 1)])
    assert not check
    assert "non-adjacent step" in check.reason


@pytest.mark.parametrize(
    "path, reason",
    [
        ([], "empty"),
        ([(0, 1), (0, 2)], "starts"),
        ([(0, 0), (0, 1)], "ends"),
        ([(0, 0), (0, 1), (0, 0), (0, 1), (0, 2)], "repeated"),
        ([(0, 0), (1, 0), (1, 1), (1, 2), (0, 2)], "blocked"),
    ],
)
def test_verify_violations(path, reason):
    blocked = np.zeros((3, 3), bool)
    blocked[1, 1] = True
    g = GridMap(blocked, (0, 0), (0, 2))
    check = verify_path(g, path)
    assert not check and reason in check.reason


def test_verify_label_from_generator():
    g = generate_scene(DEFAULT_FAMILIES[0], (12, 12), 4)
    assert verify_path(g, label_scene(g))


def test_path_cost_examples():
    assert path_cost([(2, 2)]) == 0.0
    assert path_cost([(0, c) for c in range(5)]) == 4.0
    assert path_cost([(0, 0), (1, 1), (2, 2), (2, 3)]) == pytest.approx(1.0 + 2 * math.sqrt(2), abs=1e-12)


def test_path_cost_rejects_invalid():
    g = GridMap.empty(3, 3, (0, 0), (2, 2))
    with pytest.raises(GridError):
        path_cost([(0, 0), (2, 2)], g)
    with pytest.raises(GridError):
        path_cost([(0, 0), (0, 2)])


@given(st.lists(st.sampled_from([(0, 1), (1, 0), (1, 1), (-1, 1)]), min_size=1, max_size=20), st.integers(0, 19))
def test_path_cost_additive(steps, cut):
    pts = [(0, 0)]
    for dr, dc in steps:
        pts.append((pts[-1][0] + dr, pts[-1][1] + dc))
    cut = min(cut, len(pts) - 2)
    p, q = pts[: cut + 1], pts[cut + 1 :]
    joint = path_cost(p) + path_cost([p[-1], q[0]]) + path_cost(q)
    assert path_cost(pts) == pytest.approx(joint, abs=1e-9)


SMALLEST = b"SCENE v1 2 2 4\nS.\n.G\n"


def test_serialize_smallest_scene_exact():
    g = GridMap.empty(2, 2, (0, 0), (1, 1))
    data = serialize_scene(g)
    assert data == SMALLEST
    assert len(data.decode().splitlines()) == 3


def test_serialize_with_label_exact():
    g = GridMap.empty(2, 2, (0, 0), (1, 1))
    data = serialize_scene(g, [(0, 0), (0, 1), (1, 1)])
    assert data == SMALLEST + b"PATH 3\n0 0\n0 1\n1 1\n"
    grid, label = parse_scene(data)
    assert grid == g and label == [(0, 0), (0, 1), (1, 1)]


def test_serialize_identity_glyph():
    g = GridMap.empty(2, 3, (1, 2), (1, 2), connectivity=8)
    assert serialize_scene(g) == b"SCENE v1 2 3 8\n...\n..B\n"
    assert parse_scene(serialize_scene(g))[0] == g


def test_round_trip_generated_scenes():
    for seed in range(1000):
        fam = DEFAULT_FAMILIES[seed % len(DEFAULT_FAMILIES)]
        g = generate_scene(fam, (8 + seed % 5, 9), seed, connectivity=4 if seed % 3 else 8)
        label = label_scene(g) if seed % 2 else None
        back, back_label = parse_scene(serialize_scene(g, label))
        assert back == g
        assert back_label == label


@settings(max_examples=200)
@given(maps())
def test_round_trip_property(g):
    assert parse_scene(serialize_scene(g))[0] == g


def test_start_on_blocked_cell_rejected():
    blocked = np.zeros((3, 3), bool)
    blocked[0, 0] = True
    with pytest.raises(GridError, match="start on blocked cell"):
        GridMap(blocked, (0, 0), (2, 2))


@pytest.mark.parametrize(
    "text, message",
    [
        (b"SCENE v2 2 2 4\nS.\n.G\n", "malformed header"),
        (b"SCENE v1 2 x 4\nS.\n.G\n", "malformed header"),
        (b"", "malformed header"),
        (b"SCENE v1 3 2 4\nS.\n.G\n", "dimension mismatch"),
        (b"SCENE v1 2 2 4\nS.\n.G.\n", "dimension mismatch"),
        (b"SCENE v1 2 2 4\nS?\n.G\n", "unknown cell glyph"),
        (b"SCENE v1 2 2 4\n..\n.G\n", "missing start"),
        (b"SCENE v1 2 2 4\nSS\n.G\n", "duplicate start"),
        (b"SCENE v1 2 2 4\nS.\n.G\nPATH 3\n0 0\n0 1\n", "dimension mismatch"),
        (b"SCENE v1 2 2 4\nS.\n.G\nPATH 1\n0 a\n", "malformed path cell"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(SceneFormatError, match=message):
        parse_scene(text)


def test_gridmap_is_immutable():
    g = GridMap.empty(3, 3, (0, 0), (2, 2))
    with pytest.raises(ValueError):
        g.blocked[1, 1] = True
    assert Coord(1, 2).row == 1
