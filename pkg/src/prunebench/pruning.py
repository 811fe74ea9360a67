"""Search-space reduction: masks to kept-cell sets, the corridor oracle, pruned planning."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .grid import GridError, GridMap, verify_path
from .planners import HeuristicKind, PlanResult, run_planner

DEFAULT_THRESHOLD = 0.0
DEFAULT_DILATION = 1


class Provenance(enum.Enum):
    ENCODER = "encoder"
    CORRIDOR_ORACLE = "corridor"
    NONE = "none"


@dataclass(frozen=True, eq=False)
class PrunedScene:
    base: GridMap
    kept: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        kept = np.array(self.kept, dtype=bool, copy=True)
        if kept.shape != self.base.shape:
            raise GridError(f"kept shape {kept.shape} does not match map {self.base.shape}")
        kept &= ~self.base.blocked
        kept[self.base.start] = True
        kept[self.base.goal] = True
        kept.setflags(write=False)
        object.__setattr__(self, "kept", kept)

    @property
    def kept_count(self) -> int:
        return int(np.count_nonzero(self.kept))

    def as_map(self) -> GridMap:
        """The base map with every discarded cell blocked."""
        return self.base.with_blocked(~self.kept)


@dataclass(frozen=True)
class PrunedPlanResult:
    result: PlanResult
    used_fallback: bool
    encoder_seconds: float
    preprocess_seconds: float
    total_seconds: float
    kept_cells: int = 0


def chebyshev_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool))


def mask_keep(mask: np.ndarray, threshold: float = DEFAULT_THRESHOLD, dilation: int = DEFAULT_DILATION) -> np.ndarray:
    """Cells whose score exceeds ``threshold``, grown by a Chebyshev ``dilation`` radius."""
    return chebyshev_dilate(np.asarray(mask) > threshold, dilation)


def path_recall(mask: np.ndarray, label: Sequence, threshold: float = DEFAULT_THRESHOLD,
                dilation: int = DEFAULT_DILATION) -> float:
    """Fraction of label cells kept by the thresholded, dilated mask (no start/goal forcing)."""
    keep = mask_keep(mask, threshold, dilation)
    rows, cols = np.asarray(label).T
    return float(keep[rows, cols].mean())


def postprocess_mask(
    mask: np.ndarray,
    grid: GridMap,
    threshold: float = DEFAULT_THRESHOLD,
    dilation: int = DEFAULT_DILATION,
) -> PrunedScene:
    mask = np.asarray(mask)
    if mask.shape != grid.shape:
        raise GridError(f"mask shape {mask.shape} does not match map {grid.shape}")
    return PrunedScene(grid, mask_keep(mask, threshold, dilation), Provenance.ENCODER)


def corridor_oracle(grid: GridMap, label: Sequence, radius: int) -> PrunedScene:
    """Keep the free cells within Chebyshev ``radius`` of the known shortest path."""
    if radius < 0:
        raise ValueError("corridor radius must be >= 0")
    check = verify_path(grid, label)
    if not check:
        raise GridError(f"invalid label: {check.reason}")
    on_path = np.zeros(grid.shape, dtype=bool)
    rows, cols = np.asarray(label).T
    on_path[rows, cols] = True
    return PrunedScene(grid, chebyshev_dilate(on_path, radius), Provenance.CORRIDOR_ORACLE)


def no_pruning(grid: GridMap) -> PrunedScene:
    return PrunedScene(grid, ~grid.blocked, Provenance.NONE)


def run_pruned(
    planner: str,
    grid: GridMap,
    pruned: PrunedScene,
    h: Optional[HeuristicKind] = None,
    *,
    encoder_seconds: float = 0.0,
    preprocess_seconds: float = 0.0,
) -> PrunedPlanResult:
    """Plan on the pruned map; on failure rerun on the full map and flag the fallback.

    Fallback iterations and planner time are added to the pruned attempt's.
    ``preprocess_seconds`` should carry the mask post-processing time; building
    the derived map is added to it here.
    """
    if pruned.base != grid:
        raise GridError("pruned scene was built for a different map")
    t0 = time.perf_counter()
    reduced = pruned.as_map()
    reduced.search_layout
    preprocess_seconds += time.perf_counter() - t0

    res = run_planner(planner, reduced, h)
    used_fallback = False
    if res.path is None:
        full = run_planner(planner, grid, h)
        if full.path is not None:
            used_fallback = True
        res = PlanResult(full.path, res.iterations + full.iterations, res.planner_seconds + full.planner_seconds)
    total = encoder_seconds + preprocess_seconds + res.planner_seconds
    return PrunedPlanResult(res, used_fallback, encoder_seconds, preprocess_seconds, total, pruned.kept_count)
