"""Baseline vs pruned benchmark runs and Table-style reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid import GridMap, path_cost, verify_path
from .planners import PLANNERS, HeuristicKind, PlannerError, default_heuristic
from .pruning import (
    DEFAULT_DILATION,
    DEFAULT_THRESHOLD,
    PrunedPlanResult,
    corridor_oracle,
    no_pruning,
    postprocess_mask,
    run_pruned,
)
from .scenarios import DatasetManifest

log = logging.getLogger(__name__)

ALL_FAMILIES = "ALL"
BASELINE = "none"

CSV_COLUMNS = (
    "family",
    "planner",
    "pruner",
    "mean_iters",
    "mean_planner_s",
    "mean_encoder_s",
    "mean_preprocess_s",
    "mean_total_s",
    "cost_ratio",
    "fallback_rate",
    "iter_improvement_pct",
    "time_improvement_pct",
)


class BenchmarkError(RuntimeError):
    pass


def improvement(base: float, treated: float) -> float:
    """Percent reduction from ``base`` to ``treated``; negative when treated is worse."""
    if not base > 0:
        raise ValueError(f"improvement needs a positive baseline, got {base}")
    return (base - treated) / base * 100.0


@dataclass
class BenchConfig:
    manifest: str
    planners: Sequence[str] = ("dijkstra", "astar", "bi_astar", "bfs", "best_first")
    pruner: str = BASELINE
    heuristic: Optional[HeuristicKind] = None
    reps: int = 5
    out_dir: Optional[str] = None
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    dilation: int = DEFAULT_DILATION
    split: str = "test"
    limit: Optional[int] = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.planners:
            raise ValueError("select at least one planner")
        unknown = [p for p in self.planners if p not in PLANNERS]
        if unknown:
            raise ValueError(f"unknown planners {unknown}; choose from {list(PLANNERS)}")
        parse_pruner(self.pruner)


def parse_pruner(spec: str) -> tuple[str, Optional[str]]:
    """``none`` | ``encoder:<weights>`` | ``corridor:<radius>`` -> (kind, argument)."""
    if spec == BASELINE:
        return BASELINE, None
    kind, sep, arg = spec.partition(":")
    if not sep or kind not in ("encoder", "corridor") or not arg:
        raise ValueError(f"bad pruner {spec!r}; use none, encoder:<weights> or corridor:<radius>")
    if kind == "corridor":
        try:
            if int(arg) < 0:
                raise ValueError
        except ValueError:
            raise ValueError(f"corridor radius must be a non-negative integer, got {arg!r}") from None
    return kind, arg


@dataclass
class ReportRow:
    family: str
    planner: str
    pruner: str
    mean_iters: float
    mean_planner_s: float
    mean_encoder_s: float
    mean_preprocess_s: float
    mean_total_s: float
    cost_ratio: float
    fallback_rate: float
    iter_improvement_pct: Optional[float] = None
    time_improvement_pct: Optional[float] = None


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    scenes: int = 0
    reps: int = 1
    pruner: str = BASELINE

    def find(self, family: str, planner: str, pruner: str) -> Optional[ReportRow]:
        for row in self.rows:
            if (row.family, row.planner, row.pruner) == (family, planner, pruner):
                return row
        return None

    def to_json(self) -> str:
        doc = {"scenes": self.scenes, "reps": self.reps, "pruner": self.pruner,
               "rows": [asdict(r) for r in self.rows]}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        doc = json.loads(text)
        return cls([ReportRow(**r) for r in doc["rows"]], doc["scenes"], doc["reps"], doc["pruner"])


@dataclass
class SceneRecord:
    family: str
    planner: str
    pruner: str
    iterations: int
    planner_s: float
    encoder_s: float
    preprocess_s: float
    total_s: float
    cost_ratio: float
    fallback: bool


def _median_runs(fn, reps: int, what: str):
    """Run ``fn`` ``reps`` times; iteration counts must agree; returns (first result, median seconds list)."""
    results = [fn() for _ in range(reps)]
    iters = {r.result.iterations for r in results}
    if len(iters) != 1:
        raise BenchmarkError(f"{what}: iteration counts differ across repetitions: {sorted(iters)}")
    first = results[0]
    med = lambda attr: statistics.median(getattr(r, attr) for r in results)  # noqa: E731
    planner_s = statistics.median(r.result.planner_seconds for r in results)
    return first, planner_s, med("encoder_seconds"), med("preprocess_seconds"), med("total_seconds")


class _EncoderPruner:
    def __init__(self, weights_path: str, threshold: float, dilation: int):
        from .encoder.network import encode_input, forward
        from .encoder.weights import load_params

        self.params = load_params(Path(weights_path).read_bytes())
        self._encode, self._forward = encode_input, forward
        self.threshold, self.dilation = threshold, dilation

    def __call__(self, grid: GridMap, label):
        arch = self.params.arch
        if grid.shape != (arch.height, arch.width):
            raise BenchmarkError(
                f"encoder expects {arch.height}x{arch.width} scenes, got {grid.height}x{grid.width}"
            )
        t0 = time.perf_counter()
        mask = self._forward(self.params, self._encode(grid), train=False)[0]
        t1 = time.perf_counter()
        pruned = postprocess_mask(mask, grid, self.threshold, self.dilation)
        t2 = time.perf_counter()
        return pruned, t1 - t0, t2 - t1


def _make_pruner(cfg: BenchConfig):
    kind, arg = parse_pruner(cfg.pruner)
    if kind == BASELINE:
        return None
    if kind == "encoder":
        return _EncoderPruner(arg, cfg.threshold, cfg.dilation)
    radius = int(arg)

    def corridor(grid, label):
        t0 = time.perf_counter()
        pruned = corridor_oracle(grid, label, radius)
        return pruned, 0.0, time.perf_counter() - t0

    return corridor


def benchmark_scene(family, grid, label, planners, pruner_name, pruner, reps, heuristic=None):
    """Per-planner baseline and (optionally) pruned records for one scene."""
    label_cost = path_cost(label)
    records = []
    base_scene = no_pruning(grid)
    h = heuristic or default_heuristic(grid)

    def ratio(res: PrunedPlanResult, what):
        if res.result.path is None:
            raise BenchmarkError(f"{what}: no path found on a labeled scene")
        check = verify_path(grid, res.result.path)
        if not check:
            raise BenchmarkError(f"{what}: invalid path ({check.reason})")
        cost = path_cost(res.result.path)
        return 1.0 if label_cost == 0 else cost / label_cost

    for planner in planners:
        if planner == "bfs" and grid.connectivity != 4:
            raise PlannerError("BFS requires uniform costs (4-connectivity)")
        what = f"{family}/{planner}/{BASELINE}"
        res, ps, es, pp, ts = _median_runs(lambda: run_pruned(planner, grid, base_scene, h), reps, what)
        # the baseline has no encoder or preprocessing stage
        records.append(SceneRecord(family, planner, BASELINE, res.result.iterations, ps, 0.0, 0.0, ps,
                                   ratio(res, what), False))
        if pruner is None:
            continue
        what = f"{family}/{planner}/{pruner_name}"

        def pruned_run():
            pruned, enc_s, pre_s = pruner(grid, label)
            return run_pruned(planner, grid, pruned, h, encoder_seconds=enc_s, preprocess_seconds=pre_s)

        res, ps, es, pp, ts = _median_runs(pruned_run, reps, what)
        records.append(SceneRecord(family, planner, pruner_name, res.result.iterations, ps, es, pp, ts,
                                   ratio(res, what), res.used_fallback))
    return records


def aggregate(records: Sequence[SceneRecord], planners: Sequence[str], pruner: str) -> list[ReportRow]:
    """Mean rows per (family, planner, pruner) plus ``ALL`` rows averaging the family means."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.family, rec.planner, rec.pruner), []).append(rec)
    families = sorted({r.family for r in records})
    prunings = [BASELINE] if pruner == BASELINE else [BASELINE, pruner]

    def mean_row(family, planner, prun, recs):
        arr = lambda attr: float(np.mean([getattr(r, attr) for r in recs]))  # noqa: E731
        return ReportRow(family, planner, prun, arr("iterations"), arr("planner_s"), arr("encoder_s"),
                         arr("preprocess_s"), arr("total_s"), arr("cost_ratio"), arr("fallback"))

    rows = []
    for family in families:
        for planner in planners:
            for prun in prunings:
                recs = groups.get((family, planner, prun))
                if recs:
                    rows.append(mean_row(family, planner, prun, recs))
    if len(families) > 1:
        for planner in planners:
            for prun in prunings:
                fam_rows = [r for r in rows if r.planner == planner and r.pruner == prun]
                if not fam_rows:
                    continue
                vals = {
                    k: float(np.mean([getattr(r, k) for r in fam_rows]))
                    for k in CSV_COLUMNS[3:10]
                }
                rows.append(ReportRow(ALL_FAMILIES, planner, prun, **vals))
    return add_improvements(rows)


def add_improvements(rows: list[ReportRow]) -> list[ReportRow]:
    base = {(r.family, r.planner): r for r in rows if r.pruner == BASELINE}
    for r in rows:
        if r.pruner == BASELINE:
            continue
        b = base.get((r.family, r.planner))
        if b is None:
            continue
        r.iter_improvement_pct = improvement(b.mean_iters, r.mean_iters) if b.mean_iters > 0 else None
        r.time_improvement_pct = improvement(b.mean_total_s, r.mean_total_s) if b.mean_total_s > 0 else None
    return rows


def run_benchmark(cfg: BenchConfig) -> BenchReport:
    manifest = DatasetManifest.load(cfg.manifest)
    if not manifest.splits.get(cfg.split):
        raise FileNotFoundError(f"manifest {cfg.manifest} has no scenes in split {cfg.split!r}")
    if "bfs" in cfg.planners and manifest.connectivity != 4:
        raise PlannerError("BFS requires uniform costs (4-connectivity); drop bfs or use a 4-connected dataset")
    pruner = _make_pruner(cfg)
    records = []
    scenes = 0
    for family, grid, label in manifest.scenes(cfg.split):
        if cfg.limit is not None and scenes >= cfg.limit:
            break
        records.extend(benchmark_scene(family, grid, label, cfg.planners, cfg.pruner, pruner, cfg.reps, cfg.heuristic))
        scenes += 1
    report = BenchReport(aggregate(records, cfg.planners, cfg.pruner), scenes, cfg.reps, cfg.pruner)
    if cfg.out_dir:
        emit_report(report, cfg.out_dir)
    return report


# ---------------------------------------------------------------------------
# rendering


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return format(float(v), ".10g")


def report_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def _label(row: ReportRow) -> str:
    return row.planner if row.pruner == BASELINE else f"{row.pruner} + {row.planner}"


def report_table(report: BenchReport) -> str:
    """Plain-text table of mean iterations and time per planner, with and without pruning.

    Uses the ``ALL`` rows when several families are present, otherwise the
    single family's rows.
    """
    families = {r.family for r in report.rows}
    family = ALL_FAMILIES if ALL_FAMILIES in families else (min(families) if families else ALL_FAMILIES)
    rows = [r for r in report.rows if r.family == family]
    head = ("Planner", "Iterations", "Time (s)", "Iter. impr.", "Time impr.")
    body = []
    for r in rows:
        body.append((
            _label(r),
            f"{r.mean_iters:.2f}",
            f"{r.mean_total_s:.10f}",
            "" if r.iter_improvement_pct is None else f"{r.iter_improvement_pct:.2f}%",
            "" if r.time_improvement_pct is None else f"{r.time_improvement_pct:.2f}%",
        ))
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt_line = lambda cells: "  ".join(  # noqa: E731
        c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))
    ).rstrip()
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    lines = [f"Scenes: {report.scenes}  Family: {family}  Repetitions: {report.reps}", rule, fmt_line(head), rule]
    lines.extend(fmt_line(b) for b in body)
    lines.append(rule)
    treated = [r for r in rows if r.pruner != BASELINE and r.iter_improvement_pct is not None]
    if treated:
        it = float(np.mean([r.iter_improvement_pct for r in treated]))
        tm = [r.time_improvement_pct for r in treated if r.time_improvement_pct is not None]
        lines.append(f"Average improvement over planners: iterations {it:.2f}%"
                     + (f", time {float(np.mean(tm)):.2f}%" if tm else ""))
    return "\n".join(lines) + "\n"


def emit_report(report: BenchReport, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "table": out / "report.txt",
    }
    files["json"].write_text(report.to_json())
    files["csv"].write_text(report_csv(report))
    files["table"].write_text(report_table(report))
    return files
