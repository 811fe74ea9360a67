"""Procedural scene families, exact shortest-path labels and dataset materialization."""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import ndimage

from .grid import SQRT2, Coord, GridMap, parse_scene, serialize_scene, verify_path

log = logging.getLogger(__name__)

MIN_SIZE = 4
MAX_DENSITY = 0.6
DEFAULT_RETRIES = 100
SPLITS = ("train", "val", "test")


class GenerationError(RuntimeError):
    pass


class LabelError(RuntimeError):
    pass


class FamilyKind(str, enum.Enum):
    SCATTER = "scatter"
    BARS = "bars"
    ROOMS = "rooms"
    BLOBS = "blobs"
    MAZE = "maze"


@dataclass(frozen=True)
class SceneFamily:
    """Obstacle layout family.

    ``density`` is the target blocked fraction for scatter/bars/blobs. For
    rooms it scales the door width and for mazes it is the fraction of maze
    walls that survive loop-carving (times the wall fill of a perfect maze).
    """

    kind: FamilyKind
    density: float = 0.3
    wall_thickness: int = 1
    gap_count: int = 2
    blob_min: int = 2
    blob_max: int = 6

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        if not 0.0 <= self.density <= MAX_DENSITY:
            raise ValueError(f"density must be in [0, {MAX_DENSITY}], got {self.density}")
        if self.wall_thickness < 1 or self.gap_count < 1:
            raise ValueError("wall_thickness and gap_count must be >= 1")
        if not 1 <= self.blob_min <= self.blob_max:
            raise ValueError("need 1 <= blob_min <= blob_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneFamily":
        return cls(**d)


DEFAULT_FAMILIES = (
    SceneFamily(FamilyKind.SCATTER, density=0.3),
    SceneFamily(FamilyKind.BARS, density=0.25, wall_thickness=1),
    SceneFamily(FamilyKind.ROOMS, density=0.3, gap_count=2),
    SceneFamily(FamilyKind.BLOBS, density=0.3, blob_min=2, blob_max=6),
    SceneFamily(FamilyKind.MAZE, density=0.5),
)


def family_by_name(name: str) -> SceneFamily:
    for fam in DEFAULT_FAMILIES:
        if fam.kind.value == name:
            return fam
    raise ValueError(f"unknown family {name!r}; choose from {[f.kind.value for f in DEFAULT_FAMILIES]}")


# ---------------------------------------------------------------------------
# obstacle layouts


def _scatter(fam, h, w, rng):
    return rng.random((h, w)) < fam.density


def _bars(fam, h, w, rng):
    blocked = np.zeros((h, w), dtype=bool)
    target = fam.density * h * w
    t = fam.wall_thickness
    for _ in range(10 * h * w):
        if blocked.sum() >= target:
            break
        if rng.random() < 0.5:
            length = int(rng.integers(max(2, w // 4), max(3, (3 * w) // 4) + 1))
            r = int(rng.integers(0, h))
            c = int(rng.integers(0, max(1, w - length + 1)))
            blocked[r : r + t, c : c + length] = True
        else:
            length = int(rng.integers(max(2, h // 4), max(3, (3 * h) // 4) + 1))
            r = int(rng.integers(0, max(1, h - length + 1)))
            c = int(rng.integers(0, w))
            blocked[r : r + length, c : c + t] = True
    return blocked


def _rooms(fam, h, w, rng):
    # walls on a jittered lattice; each wall segment between junctions gets doors
    blocked = np.zeros((h, w), dtype=bool)
    if fam.density == 0.0:
        return blocked
    room = max(4, int(round(min(h, w) / 4)))
    t = fam.wall_thickness
    rows = list(range(room, h - 1, room))
    cols = list(range(room, w - 1, room))
    for r in rows:
        blocked[r : r + t, :] = True
    for c in cols:
        blocked[:, c : c + t] = True
    door = max(1, int(round((1.0 - fam.density) * room / 2)))
    row_edges = [0] + rows + [h]
    col_edges = [0] + cols + [w]
    for r in rows:
        for a, b in zip(col_edges[:-1], col_edges[1:]):
            lo = a + (t if a else 0)
            for _ in range(fam.gap_count if rng.random() < 0.85 else 0):
                if b - lo > door:
                    c0 = int(rng.integers(lo, b - door + 1))
                    blocked[r : r + t, c0 : c0 + door] = False
    for c in cols:
        for a, b in zip(row_edges[:-1], row_edges[1:]):
            lo = a + (t if a else 0)
            for _ in range(fam.gap_count if rng.random() < 0.85 else 0):
                if b - lo > door:
                    r0 = int(rng.integers(lo, b - door + 1))
                    blocked[r0 : r0 + door, c : c + t] = False
    return blocked


def _blobs(fam, h, w, rng):
    blocked = np.zeros((h, w), dtype=bool)
    target = fam.density * h * w
    rr, cc = np.mgrid[0:h, 0:w]
    for _ in range(10 * h * w):
        if blocked.sum() >= target:
            break
        radius = rng.uniform(fam.blob_min, fam.blob_max) / 2.0
        r0, c0 = rng.uniform(0, h), rng.uniform(0, w)
        stretch = rng.uniform(0.6, 1.6)
        blocked |= ((rr - r0) / radius) ** 2 + ((cc - c0) / (radius * stretch)) ** 2 <= 1.0
    return blocked


def _maze(fam, h, w, rng):
    # perfect maze via randomized depth-first carving on odd coordinates, then
    # knock down walls so that roughly `density` of the maze walls survive
    blocked = np.ones((h, w), dtype=bool)
    ch, cw = (h + 1) // 2, (w + 1) // 2
    seen = np.zeros((ch, cw), dtype=bool)
    stack = [(int(rng.integers(ch)), int(rng.integers(cw)))]
    seen[stack[0]] = True
    blocked[2 * stack[0][0], 2 * stack[0][1]] = False
    while stack:
        r, c = stack[-1]
        options = [
            (r + dr, c + dc)
            for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1))
            if 0 <= r + dr < ch and 0 <= c + dc < cw and not seen[r + dr, c + dc]
        ]
        if not options:
            stack.pop()
            continue
        nr, nc = options[int(rng.integers(len(options)))]
        seen[nr, nc] = True
        blocked[2 * nr, 2 * nc] = False
        blocked[r + nr, c + nc] = False
        stack.append((nr, nc))
    walls = np.argwhere(blocked & ((np.indices((h, w)).sum(axis=0) % 2) == 1))
    keep_fraction = fam.density / MAX_DENSITY
    knock = rng.random(len(walls)) >= keep_fraction
    for r, c in walls[knock]:
        blocked[r, c] = False
    return blocked


_LAYOUTS = {
    FamilyKind.SCATTER: _scatter,
    FamilyKind.BARS: _bars,
    FamilyKind.ROOMS: _rooms,
    FamilyKind.BLOBS: _blobs,
    FamilyKind.MAZE: _maze,
}


def _structure(connectivity):
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def generate_scene(
    family: SceneFamily,
    size: tuple[int, int],
    seed: int,
    *,
    connectivity: int = 4,
    retries: int = DEFAULT_RETRIES,
) -> GridMap:
    """Deterministic random scene for ``(family, size, seed)`` with a reachable goal.

    Obstacles, start and goal are redrawn together until start and goal lie in
    the same free component.
    """
    h, w = size
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ValueError(f"scene size must be at least {MIN_SIZE}x{MIN_SIZE}, got {h}x{w}")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    layout = _LAYOUTS[family.kind]
    for _ in range(retries):
        blocked = layout(family, h, w, rng)
        free = np.flatnonzero(~blocked.ravel())
        if len(free) < 2:
            continue
        i, j = rng.choice(len(free), size=2, replace=False)
        start = divmod(int(free[i]), w)
        goal = divmod(int(free[j]), w)
        labels, _ = ndimage.label(~blocked, structure=_structure(connectivity))
        if labels[start] == labels[goal]:
            return GridMap(blocked, start, goal, connectivity)
    raise GenerationError(
        f"unsatisfiable family parameters: {family.kind.value} density {family.density} "
        f"at {h}x{w} gave no reachable start/goal in {retries} draws"
    )


def segment_distance(shape, a, b) -> np.ndarray:
    """Euclidean distance from every cell centre to the segment ``a``-``b``."""
    rows, cols = np.indices(shape, dtype=np.float64)
    dr, dc = b[0] - a[0], b[1] - a[1]
    length2 = float(dr * dr + dc * dc)
    if length2 == 0:
        return np.hypot(rows - a[0], cols - a[1])
    t = np.clip(((rows - a[0]) * dr + (cols - a[1]) * dc) / length2, 0.0, 1.0)
    return np.hypot(rows - a[0] - t * dr, cols - a[1] - t * dc)


def label_scene(grid: GridMap) -> list[Coord]:
    """Minimum-cost path by uniform-cost search; the dataset's ground truth.

    Among equal-cost paths the one hugging the straight start-goal segment is
    preferred (smallest summed cell distance to it), which makes labels a
    canonical function of the scene rather than of queue order.
    """
    start, goal = grid.start, grid.goal
    offsets = grid.offsets
    blocked = grid.blocked
    h, w = grid.shape
    dev = segment_distance(grid.shape, start, goal).tolist()
    best = {start: (0.0, 0.0)}
    parent = {start: None}
    done = set()
    heap = [(0.0, 0.0, 0, start)]
    tick = 1
    while heap:
        d, s, _, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == goal:
            break
        r, c = cell
        for dr, dc in offsets:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not blocked[nr, nc]:
                nb = Coord(nr, nc)
                key = (d + (SQRT2 if dr and dc else 1.0), s + dev[nr][nc])
                if nb not in done and key < best.get(nb, (math.inf, math.inf)):
                    best[nb] = key
                    parent[nb] = cell
                    heapq.heappush(heap, (key[0], key[1], tick, nb))
                    tick += 1
    if goal not in done:
        raise LabelError(f"no path exists from {tuple(start)} to {tuple(goal)}")
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetConfig:
    families: Sequence[SceneFamily] = DEFAULT_FAMILIES
    count: int = 512
    size: tuple[int, int] = (60, 60)
    seed: int = 0
    connectivity: int = 4
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    workers: int = 1


@dataclass
class DatasetManifest:
    root: FsPath
    seed: int
    size: tuple[int, int]
    connectivity: int
    families: list
    counts: dict
    split_fractions: tuple
    splits: dict = field(default_factory=dict)
    label_failures: int = 0

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "size": list(self.size),
            "connectivity": self.connectivity,
            "families": [f.to_dict() for f in self.families],
            "counts": self.counts,
            "split_fractions": list(self.split_fractions),
            "label_failures": self.label_failures,
            "splits": {k: list(self.splits.get(k, [])) for k in SPLITS},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = FsPath(path)
        if path.is_dir():
            path = path / "manifest.json"
        doc = json.loads(path.read_text())
        return cls(
            root=path.parent,
            seed=doc["seed"],
            size=tuple(doc["size"]),
            connectivity=doc.get("connectivity", 4),
            families=[SceneFamily.from_dict(f) for f in doc["families"]],
            counts=doc.get("counts", {}),
            split_fractions=tuple(doc.get("split_fractions", (0.8, 0.1, 0.1))),
            splits={k: list(doc["splits"].get(k, [])) for k in SPLITS},
            label_failures=doc.get("label_failures", 0),
        )

    def scenes(self, split: str) -> Iterator[tuple[str, GridMap, list[Coord]]]:
        """Yield ``(family name, map, label)`` for every scene in ``split``."""
        for rel in self.splits[split]:
            grid, label = parse_scene((self.root / rel).read_bytes())
            yield family_of(rel), grid, label


def family_of(scene_path: str) -> str:
    return os.path.basename(scene_path).split("-", 1)[0]


def split_sizes(total: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    n_train = int(round(total * fractions[0]))
    n_val = min(total - n_train, int(round(total * fractions[1])))
    return n_train, n_val, total - n_train - n_val


def assign_splits(seed: int, total: int, fractions: Sequence[float]) -> list[str]:
    """Split name per scene index, by ordering indices on a stable hash."""
    sizes = split_sizes(total, fractions)
    order = sorted(
        range(total), key=lambda i: hashlib.sha256(f"{seed}:{i}".encode()).hexdigest()
    )
    out = [""] * total
    pos = 0
    for name, k in zip(SPLITS, sizes):
        for i in order[pos : pos + k]:
            out[i] = name
        pos += k
    return out


def _make_one(job):
    fam, size, seed, connectivity = job
    grid = generate_scene(fam, size, seed, connectivity=connectivity)
    try:
        label = label_scene(grid)
    except LabelError:
        return grid, None
    return grid, label


def build_dataset(cfg: DatasetConfig, out_dir) -> DatasetManifest:
    """Generate, label and write every scene plus ``manifest.json`` under ``out_dir``."""
    out = FsPath(out_dir)
    scene_dir = out / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)

    jobs, names = [], []
    for fam in cfg.families:
        for _ in range(cfg.count):
            index = len(jobs)
            jobs.append((fam, tuple(cfg.size), cfg.seed ^ index, cfg.connectivity))
            names.append(f"{fam.kind.value}-{index:06d}.scene")

    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_make_one, jobs, chunksize=16))
    else:
        results = [_make_one(job) for job in jobs]

    membership = assign_splits(cfg.seed, len(jobs), cfg.splits)
    splits = {k: [] for k in SPLITS}
    failures = 0
    for name, split, (grid, label) in zip(names, membership, results):
        if label is None or not verify_path(grid, label):
            failures += 1
            log.warning("label failure for %s", name)
            continue
        rel = f"scenes/{name}"
        target = out / rel
        try:
            target.write_bytes(serialize_scene(grid, label))
        except OSError as exc:
            raise OSError(f"could not write scene {target}: {exc}") from exc
        splits[split].append(rel)

    manifest = DatasetManifest(
        root=out,
        seed=cfg.seed,
        size=tuple(cfg.size),
        connectivity=cfg.connectivity,
        families=list(cfg.families),
        counts={f.kind.value: cfg.count for f in cfg.families},
        split_fractions=tuple(cfg.splits),
        splits=splits,
        label_failures=failures,
    )
    path = out / "manifest.json"
    try:
        path.write_text(manifest.to_json())
    except OSError as exc:
        raise OSError(f"could not write manifest {path}: {exc}") from exc
    return manifest
