"""The five grid search algorithms with uniform instrumentation.

Every planner counts one iteration per node removed from its frontier for
expansion. A* variants order their frontier by (f, h) so that ties in f go
to the node nearer the goal; with a zero heuristic this is Dijkstra's order.
Stale heap entries (lazy deletion) are skipped and not counted. Timing covers the search loop and path reconstruction only.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .grid import SQRT2, GridMap

INF = math.inf


class PlannerError(ValueError):
    pass


class HeuristicKind(enum.Enum):
    ZERO = "zero"
    MANHATTAN = "manhattan"
    OCTILE = "octile"


def heuristic(kind: HeuristicKind, a, b) -> float:
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    if kind is HeuristicKind.ZERO:
        return 0.0
    if kind is HeuristicKind.MANHATTAN:
        return float(dr + dc)
    if kind is HeuristicKind.OCTILE:
        return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)
    raise PlannerError(f"unknown heuristic {kind!r}")


def default_heuristic(grid: GridMap) -> HeuristicKind:
    return HeuristicKind.MANHATTAN if grid.connectivity == 4 else HeuristicKind.OCTILE


def _check_admissible(kind: HeuristicKind, grid: GridMap):
    if kind is HeuristicKind.MANHATTAN and grid.connectivity == 8:
        raise PlannerError("Manhattan heuristic is not admissible on 8-connected maps")


class Frontier:
    """Min-priority queue of cells with FIFO tie-breaking.

    Keys are anything totally ordered (floats, or tuples compared
    lexicographically). Duplicates are allowed; callers skip stale entries
    on extraction.
    """

    __slots__ = ("_heap", "_counter")

    def __init__(self):
        self._heap = []
        self._counter = itertools.count()

    def push(self, key, cell) -> None:
        heapq.heappush(self._heap, (key, next(self._counter), cell))

    def pop(self):
        key, _, cell = heapq.heappop(self._heap)
        return key, cell

    def peek_key(self):
        return self._heap[0][0]

    def peek(self):
        return self._heap[0][2]

    def __len__(self):
        return len(self._heap)

    def __bool__(self):
        return bool(self._heap)


@dataclass(frozen=True)
class PlanResult:
    path: Optional[list]
    iterations: int
    planner_seconds: float

    @property
    def expanded(self) -> int:
        return self.iterations

    @property
    def found(self) -> bool:
        return self.path is not None


def _index_heuristic(grid: GridMap, kind: HeuristicKind, target: int) -> Callable[[int], float]:
    stride = grid.width + 2
    tr, tc = divmod(target, stride)
    if kind is HeuristicKind.ZERO:
        return lambda v: 0.0
    if kind is HeuristicKind.MANHATTAN:

        def h(v):
            r, c = divmod(v, stride)
            return float(abs(r - tr) + abs(c - tc))

        return h
    diag = SQRT2 - 1.0

    def h(v):
        r, c = divmod(v, stride)
        dr = abs(r - tr)
        dc = abs(c - tc)
        return dr + diag * dc if dr >= dc else dc + diag * dr

    return h


def _unwind(grid: GridMap, parent: list, node: int) -> list:
    out = []
    while node != -1:
        out.append(grid.from_index(node))
        node = parent[node]
    out.reverse()
    return out


def _best_cost_search(grid: GridMap, kind: HeuristicKind, trace: Optional[list]) -> PlanResult:
    free, stride, moves = grid.search_layout
    n = len(free)
    src = grid.to_index(grid.start)
    dst = grid.to_index(grid.goal)
    h = _index_heuristic(grid, kind, dst)

    g = [INF] * n
    parent = [-1] * n
    closed = bytearray(n)
    frontier = Frontier()
    iterations = 0
    found = False

    t0 = time.perf_counter()
    g[src] = 0.0
    hs = h(src)
    frontier.push((hs, hs), src)
    while frontier:
        _, u = frontier.pop()
        if closed[u]:
            continue
        closed[u] = 1
        iterations += 1
        if trace is not None:
            trace.append(grid.from_index(u))
        if u == dst:
            found = True
            break
        gu = g[u]
        for off, w in moves:
            v = u + off
            if not free[v] or closed[v]:
                continue
            ng = gu + w
            if ng < g[v]:
                g[v] = ng
                parent[v] = u
                hv = h(v)
                frontier.push((ng + hv, hv), v)
    path = _unwind(grid, parent, dst) if found else None
    return PlanResult(path, iterations, time.perf_counter() - t0)


def dijkstra(grid: GridMap, *, trace: Optional[list] = None) -> PlanResult:
    """Uniform-cost search with early exit when the goal is extracted."""
    return _best_cost_search(grid, HeuristicKind.ZERO, trace)


def astar(grid: GridMap, h: Optional[HeuristicKind] = None, *, trace: Optional[list] = None) -> PlanResult:
    kind = h or default_heuristic(grid)
    _check_admissible(kind, grid)
    return _best_cost_search(grid, kind, trace)


def bi_astar(grid: GridMap, h: Optional[HeuristicKind] = None) -> PlanResult:
    """Bidirectional A*: forward and backward searches alternate one expansion each.

    Stops once the best joined cost found so far is no larger than the larger
    of the two frontiers' minimum f-values; with a consistent heuristic no
    cheaper connection can remain. A cell already closed by the opposite
    search is dropped without expansion (its optimal remainder is known and
    the joined cost through it was recorded when it was reached), so every
    cell is expanded at most once overall.
    """
    kind = h or default_heuristic(grid)
    _check_admissible(kind, grid)
    free, stride, moves = grid.search_layout
    n = len(free)
    src = grid.to_index(grid.start)
    dst = grid.to_index(grid.goal)

    t0 = time.perf_counter()
    if src == dst:
        return PlanResult([grid.start], 1, time.perf_counter() - t0)

    hs = (_index_heuristic(grid, kind, dst), _index_heuristic(grid, kind, src))
    gs = ([INF] * n, [INF] * n)
    parents = ([-1] * n, [-1] * n)
    closeds = (bytearray(n), bytearray(n))
    frontiers = (Frontier(), Frontier())
    gs[0][src] = 0.0
    gs[1][dst] = 0.0
    h0, h1 = hs[0](src), hs[1](dst)
    frontiers[0].push((h0, h0), src)
    frontiers[1].push((h1, h1), dst)

    best = INF
    meet = -1
    iterations = 0
    side = 0
    while True:
        for d in (0, 1):
            fr, cl, other_cl = frontiers[d], closeds[d], closeds[1 - d]
            while fr and (cl[fr.peek()] or other_cl[fr.peek()]):
                fr.pop()
        if not frontiers[0] or not frontiers[1]:
            break
        if best <= max(frontiers[0].peek_key()[0], frontiers[1].peek_key()[0]):
            break

        g, other_g = gs[side], gs[1 - side]
        parent, closed, h = parents[side], closeds[side], hs[side]
        frontier = frontiers[side]
        _, u = frontier.pop()
        closed[u] = 1
        iterations += 1
        gu = g[u]
        for off, w in moves:
            v = u + off
            if not free[v] or closed[v]:
                continue
            ng = gu + w
            if ng < g[v]:
                g[v] = ng
                parent[v] = u
                hv = h(v)
                frontier.push((ng + hv, hv), v)
                if other_g[v] < INF and ng + other_g[v] < best:
                    best = ng + other_g[v]
                    meet = v
        side = 1 - side

    path = None
    if meet != -1:
        path = _unwind(grid, parents[0], meet)
        node = parents[1][meet]
        while node != -1:
            path.append(grid.from_index(node))
            node = parents[1][node]
    return PlanResult(path, iterations, time.perf_counter() - t0)


def breadth_first(grid: GridMap) -> PlanResult:
    """FIFO search; optimal on uniform-cost (4-connected) maps."""
    if grid.connectivity != 4:
        raise PlannerError("BFS requires uniform costs (4-connectivity)")
    free, stride, moves = grid.search_layout
    n = len(free)
    src = grid.to_index(grid.start)
    dst = grid.to_index(grid.goal)
    offsets = [off for off, _ in moves]

    parent = [-1] * n
    seen = bytearray(n)
    iterations = 0
    found = False
    t0 = time.perf_counter()
    seen[src] = 1
    queue = deque([src])
    while queue:
        u = queue.popleft()
        iterations += 1
        if u == dst:
            found = True
            break
        for off in offsets:
            v = u + off
            if free[v] and not seen[v]:
                seen[v] = 1
                parent[v] = u
                queue.append(v)
    path = _unwind(grid, parent, dst) if found else None
    return PlanResult(path, iterations, time.perf_counter() - t0)


def best_first(grid: GridMap, h: Optional[HeuristicKind] = None) -> PlanResult:
    """Greedy search ordered by the heuristic alone. Paths are valid, not necessarily shortest."""
    kind = h or default_heuristic(grid)
    free, stride, moves = grid.search_layout
    n = len(free)
    src = grid.to_index(grid.start)
    dst = grid.to_index(grid.goal)
    hf = _index_heuristic(grid, kind, dst)
    offsets = [off for off, _ in moves]

    parent = [-1] * n
    visited = bytearray(n)
    frontier = Frontier()
    iterations = 0
    found = False
    t0 = time.perf_counter()
    visited[src] = 1
    frontier.push(hf(src), src)
    while frontier:
        _, u = frontier.pop()
        iterations += 1
        if u == dst:
            found = True
            break
        for off in offsets:
            v = u + off
            if free[v] and not visited[v]:
                visited[v] = 1
                parent[v] = u
                frontier.push(hf(v), v)
    path = _unwind(grid, parent, dst) if found else None
    return PlanResult(path, iterations, time.perf_counter() - t0)


PLANNERS = {
    "dijkstra": dijkstra,
    "astar": astar,
    "bi_astar": bi_astar,
    "bfs": breadth_first,
    "best_first": best_first,
}

OPTIMAL_PLANNERS = ("dijkstra", "astar", "bi_astar", "bfs")


def run_planner(name: str, grid: GridMap, h: Optional[HeuristicKind] = None) -> PlanResult:
    try:
        fn = PLANNERS[name]
    except KeyError:
        raise PlannerError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}") from None
    if name in ("dijkstra", "bfs"):
        return fn(grid)
    return fn(grid, h)
