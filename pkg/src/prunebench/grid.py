"""Occupancy-grid world: coordinates, movement rules, paths and the scene file format."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

SQRT2 = math.sqrt(2.0)

# N, E, S, W then NE, SE, SW, NW
_OFFSETS_4 = ((-1, 0), (0, 1), (1, 0), (0, -1))
_OFFSETS_8 = _OFFSETS_4 + ((-1, 1), (1, 1), (1, -1), (-1, -1))


class GridError(ValueError):
    """Contract violation on grid values (bad coordinates, invalid paths)."""


class SceneFormatError(ValueError):
    """A scene file could not be parsed."""


class Coord(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class GridMap:
    """Immutable occupancy grid with a start and a goal.

    ``blocked`` is a boolean (height, width) array; it is copied and frozen
    on construction so maps can be shared between planners safely.
    """

    blocked: np.ndarray
    start: Coord
    goal: Coord
    connectivity: int = 4

    def __post_init__(self):
        arr = np.array(self.blocked, dtype=bool, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GridError(f"blocked must be a non-empty 2-D array, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "blocked", arr)
        object.__setattr__(self, "start", Coord(int(self.start[0]), int(self.start[1])))
        object.__setattr__(self, "goal", Coord(int(self.goal[0]), int(self.goal[1])))
        if self.connectivity not in (4, 8):
            raise GridError(f"connectivity must be 4 or 8, got {self.connectivity}")
        for name in ("start", "goal"):
            cell = getattr(self, name)
            if not self.in_bounds(cell):
                raise GridError(f"{name} {tuple(cell)} out of bounds")
            if arr[cell]:
                raise GridError(f"{name} on blocked cell {tuple(cell)}")

    @property
    def height(self) -> int:
        return self.blocked.shape[0]

    @property
    def width(self) -> int:
        return self.blocked.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocked.shape

    @property
    def offsets(self) -> tuple:
        return _OFFSETS_4 if self.connectivity == 4 else _OFFSETS_8

    def in_bounds(self, cell: Sequence[int]) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def is_free(self, cell: Sequence[int]) -> bool:
        return self.in_bounds(cell) and not self.blocked[cell[0], cell[1]]

    def free_count(self) -> int:
        return int(self.blocked.size - np.count_nonzero(self.blocked))

    def with_blocked(self, blocked: np.ndarray) -> "GridMap":
        return GridMap(blocked, self.start, self.goal, self.connectivity)

    @cached_property
    def search_layout(self):
        """Flat padded representation used by the planners.

        Returns ``(free, stride, moves)`` where ``free`` is a list of bools over
        a grid padded by one blocked border, ``stride`` is the padded width and
        ``moves`` is a tuple of ``(index offset, step cost)`` in neighbor order.
        Padded index of (r, c) is ``(r + 1) * stride + c + 1``.
        """
        padded = np.ones((self.height + 2, self.width + 2), dtype=bool)
        padded[1:-1, 1:-1] = self.blocked
        stride = self.width + 2
        free = (~padded).ravel().tolist()
        moves = tuple(
            (dr * stride + dc, 1.0 if dr == 0 or dc == 0 else SQRT2) for dr, dc in self.offsets
        )
        return free, stride, moves

    def to_index(self, cell: Sequence[int]) -> int:
        return (cell[0] + 1) * (self.width + 2) + cell[1] + 1

    def from_index(self, idx: int) -> Coord:
        r, c = divmod(idx, self.width + 2)
        return Coord(r - 1, c - 1)

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.start == other.start
            and self.goal == other.goal
            and self.connectivity == other.connectivity
            and np.array_equal(self.blocked, other.blocked)
        )

    def __hash__(self):
        return hash((self.start, self.goal, self.connectivity, self.blocked.tobytes()))

    @classmethod
    def empty(cls, height: int, width: int, start, goal, connectivity: int = 4) -> "GridMap":
        return cls(np.zeros((height, width), dtype=bool), start, goal, connectivity)


def neighbors(grid: GridMap, cell: Sequence[int]) -> list[Coord]:
    """Free in-bounds cells adjacent to ``cell``, ordered N, E, S, W (then NE, SE, SW, NW)."""
    if not grid.in_bounds(cell):
        raise GridError(f"cell {tuple(cell)} out of bounds for {grid.height}x{grid.width} map")
    r, c = cell
    out = []
    for dr, dc in grid.offsets:
        nb = (r + dr, c + dc)
        if grid.is_free(nb):
            out.append(Coord(*nb))
    return out


@dataclass(frozen=True)
class PathCheck:
    valid: bool
    reason: str = ""

    def __bool__(self):
        return self.valid


def verify_path(grid: GridMap, path: Sequence[Sequence[int]]) -> PathCheck:
    """Check every path invariant against ``grid``; report the first violation."""
    if len(path) == 0:
        return PathCheck(False, "empty path")
    if tuple(path[0]) != grid.start:
        return PathCheck(False, f"path starts at {tuple(path[0])}, not start {tuple(grid.start)}")
    if tuple(path[-1]) != grid.goal:
        return PathCheck(False, f"path ends at {tuple(path[-1])}, not goal {tuple(grid.goal)}")
    seen = set()
    for i, cell in enumerate(path):
        cell = tuple(cell)
        if not grid.in_bounds(cell):
            return PathCheck(False, f"cell {cell} at position {i} out of bounds")
        if grid.blocked[cell]:
            return PathCheck(False, f"blocked cell {cell} at position {i}")
        if cell in seen:
            return PathCheck(False, f"repeated cell {cell} at position {i}")
        seen.add(cell)
        if i > 0:
            dr = abs(cell[0] - path[i - 1][0])
            dc = abs(cell[1] - path[i - 1][1])
            diagonal_ok = grid.connectivity == 8 and dr == 1 and dc == 1
            if not ((dr + dc == 1) or diagonal_ok):
                return PathCheck(False, f"non-adjacent step {tuple(path[i - 1])} -> {cell}")
    return PathCheck(True)


def path_cost(path: Sequence[Sequence[int]], grid: Optional[GridMap] = None) -> float:
    """Sum of step costs: 1 per axial step, sqrt(2) per diagonal step.

    When ``grid`` is given the path is validated against it first.
    """
    if grid is not None:
        check = verify_path(grid, path)
        if not check:
            raise GridError(f"invalid path: {check.reason}")
    if len(path) == 0:
        raise GridError("invalid path: empty path")
    axial = diagonal = 0
    for a, b in zip(path, path[1:]):
        dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
        if dr + dc == 1:
            axial += 1
        elif dr == 1 and dc == 1:
            diagonal += 1
        else:
            raise GridError(f"invalid path: non-adjacent step {tuple(a)} -> {tuple(b)}")
    return float(axial + diagonal * SQRT2)


# ---------------------------------------------------------------------------
# Scene text format

_MAGIC = "SCENE"
_VERSION = "v1"


def serialize_scene(grid: GridMap, label: Optional[Sequence[Sequence[int]]] = None) -> bytes:
    lines = [f"{_MAGIC} {_VERSION} {grid.height} {grid.width} {grid.connectivity}"]
    for r in range(grid.height):
        row = ["#" if b else "." for b in grid.blocked[r]]
        lines.append(row)
    sr, sc = grid.start
    gr, gc = grid.goal
    if grid.start == grid.goal:
        lines[sr + 1][sc] = "B"
    else:
        lines[sr + 1][sc] = "S"
        lines[gr + 1][gc] = "G"
    lines[1:] = ["".join(row) for row in lines[1:]]
    if label is not None:
        lines.append(f"PATH {len(label)}")
        lines.extend(f"{int(r)} {int(c)}" for r, c in label)
    return ("\n".join(lines) + "\n").encode("ascii")


def _parse_ints(tokens, what, lineno):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise SceneFormatError(f"line {lineno}: malformed {what}: {' '.join(tokens)!r}") from None


def parse_scene(data: bytes | str) -> tuple[GridMap, Optional[list[Coord]]]:
    """Inverse of :func:`serialize_scene`."""
    text = data.decode("ascii") if isinstance(data, (bytes, bytearray)) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SceneFormatError("malformed header: empty input")
    head = lines[0].split()
    if len(head) != 5 or head[0] != _MAGIC or head[1] != _VERSION:
        raise SceneFormatError(f"malformed header: {lines[0]!r}")
    height, width, conn = _parse_ints(head[2:], "header", 1)
    if height < 1 or width < 1 or conn not in (4, 8):
        raise SceneFormatError(f"malformed header: {lines[0]!r}")

    body = lines[1 : 1 + height]
    if len(body) < height:
        raise SceneFormatError(f"dimension mismatch: expected {height} rows, got {len(body)}")
    blocked = np.zeros((height, width), dtype=bool)
    start = goal = None
    for r, row in enumerate(body):
        if len(row) != width:
            raise SceneFormatError(
                f"dimension mismatch: row {r} has {len(row)} cells, expected {width}"
            )
        for c, ch in enumerate(row):
            if ch == "#":
                blocked[r, c] = True
            elif ch == ".":
                continue
            elif ch in "SGB":
                if ch in "SB":
                    if start is not None:
                        raise SceneFormatError(f"duplicate start at ({r}, {c})")
                    start = (r, c)
                if ch in "GB":
                    if goal is not None:
                        raise SceneFormatError(f"duplicate goal at ({r}, {c})")
                    goal = (r, c)
            else:
                raise SceneFormatError(f"unknown cell glyph {ch!r} at ({r}, {c})")
    if start is None:
        raise SceneFormatError("missing start glyph")
    if goal is None:
        raise SceneFormatError("missing goal glyph")
    try:
        grid = GridMap(blocked, start, goal, conn)
    except GridError as exc:
        raise SceneFormatError(str(exc)) from None

    rest = lines[1 + height :]
    label = None
    if rest:
        tag = rest[0].split()
        if len(tag) != 2 or tag[0] != "PATH":
            raise SceneFormatError(f"line {height + 2}: expected 'PATH <n>', got {rest[0]!r}")
        (n,) = _parse_ints(tag[1:], "path length", height + 2)
        entries = rest[1:]
        if len(entries) != n:
            raise SceneFormatError(f"dimension mismatch: PATH declares {n} cells, found {len(entries)}")
        label = []
        for i, line in enumerate(entries):
            parts = line.split()
            if len(parts) != 2:
                raise SceneFormatError(f"line {height + 3 + i}: malformed path cell {line!r}")
            r, c = _parse_ints(parts, "path cell", height + 3 + i)
            label.append(Coord(r, c))
    return grid, label
