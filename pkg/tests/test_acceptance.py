"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""

import csv
import io
import time

import numpy as np
import pytest

from acceptance_log import record
from oracles import brute_force_cost
from test_bench import GOLDEN, synthetic_report
from prunebench.bench import BenchConfig, improvement, report_csv, report_table, run_benchmark
from prunebench.encoder.network import encode_input, predict
from prunebench.encoder.training import TrainConfig, grad_check, history_csv, smoothed, train
from prunebench.encoder.weights import load_params, save_params
from prunebench.grid import GridMap, parse_scene, path_cost, serialize_scene, verify_path
from prunebench.planners import OPTIMAL_PLANNERS, best_first, dijkstra, run_planner
from prunebench.pruning import path_recall, postprocess_mask, run_pruned
from prunebench.scenarios import (
    DEFAULT_FAMILIES,
    DatasetConfig,
    DatasetManifest,
    build_dataset,
    family_by_name,
    generate_scene,
)

# desk-scale training setup used by criterion 6
DESK_DATA = DatasetConfig(DEFAULT_FAMILIES, count=500, size=(24, 24), seed=11)
DESK_TRAIN = TrainConfig(epochs=50, batch_size=32, learning_rate=1e-3, seed=0, channel_divisor=4, threshold=-0.8)


def trap_scene():
    rows = [
        ".G#....",
        "#..#...",
        ".......",
        ".......",
        ".......",
        "...#...",
        "......S",
    ]
    blocked = np.array([[ch == "#" for ch in r] for r in rows])
    return GridMap(blocked, (6, 6), (0, 1))


def test_criterion_1_optimality_oracle():
    t0 = time.perf_counter()
    mismatches, invalid, scenes = [], 0, 0
    for i in range(500):
        n = 4 + i % 4
        conn = 8 if i % 3 == 0 else 4
        g = generate_scene(DEFAULT_FAMILIES[i % 5], (n, n), i, connectivity=conn)
        truth = brute_force_cost(g.blocked, g.start, g.goal, conn)
        names = [p for p in OPTIMAL_PLANNERS if conn == 4 or p != "bfs"]
        for name in names:
            res = run_planner(name, g)
            if not verify_path(g, res.path):
                invalid += 1
            elif abs(path_cost(res.path) - truth) > 1e-9:
                mismatches.append((i, name))
        if not verify_path(g, best_first(g).path):
            invalid += 1
        scenes += 1
    trap = trap_scene()
    greedy, optimal = best_first(trap), dijkstra(trap)
    trap_ok = bool(verify_path(trap, greedy.path)) and path_cost(greedy.path) > path_cost(optimal.path)
    elapsed = time.perf_counter() - t0
    ok = not mismatches and not invalid and trap_ok and elapsed < 60
    record(1, "optimality oracle", ok,
           f"{scenes} scenes, {len(mismatches)} cost mismatches, {invalid} invalid paths, "
           f"trap best-first {path_cost(greedy.path):.0f} vs optimal {path_cost(optimal.path):.0f}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_cross_planner_agreement():
    t0 = time.perf_counter()
    disagreements = 0
    for seed in range(1000):
        g = generate_scene(DEFAULT_FAMILIES[seed % 5], (60, 60), seed)
        costs = {name: path_cost(run_planner(name, g).path) for name in ("astar", "dijkstra", "bi_astar", "bfs")}
        if len(set(costs.values())) != 1:
            disagreements += 1
    elapsed = time.perf_counter() - t0
    ok = disagreements == 0 and elapsed < 120
    record(2, "cross-planner agreement", ok, f"1000 scenes at 60x60, {disagreements} disagreements, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def scatter_60(tmp_path_factory):
    out = tmp_path_factory.mktemp("scatter60")
    cfg = DatasetConfig([family_by_name("scatter")], count=2560, size=(60, 60), seed=2024)
    manifest = build_dataset(cfg, out)
    assert len(manifest.splits["test"]) == 256
    return out


def test_criterion_3_corridor_speedup(scatter_60):
    cfg = BenchConfig(str(scatter_60), planners=["dijkstra", "bfs", "astar", "bi_astar", "best_first"],
                      pruner="corridor:2", reps=1)
    report = run_benchmark(cfg)
    rows = {r.planner: r for r in report.rows if r.pruner == "corridor:2"}
    need = {"dijkstra": 70.0, "bfs": 70.0, "astar": 40.0}
    ok = report.scenes == 256
    parts = []
    for planner, floor in need.items():
        r = rows[planner]
        ok &= r.iter_improvement_pct >= floor and r.cost_ratio == 1.0 and r.fallback_rate == 0.0
        parts.append(f"{planner} {r.iter_improvement_pct:.2f}% (ratio {r.cost_ratio}, fallback {r.fallback_rate})")
    parts.append(f"bi_astar {rows['bi_astar'].iter_improvement_pct:.2f}%")
    record(3, "corridor pruning speedup", ok, "; ".join(parts))
    assert ok


def test_criterion_4_improvement_arithmetic():
    a = improvement(910.95, 301.42)
    b = improvement(2284.51, 413.82)
    ok = abs(a - 66.91) <= 0.01 and abs(b - 81.89) <= 0.01
    record(4, "improvement arithmetic", ok, f"{a:.4f} and {b:.4f}")
    assert ok


def test_criterion_5_gradient_check():
    t0 = time.perf_counter()
    err = grad_check(coords=240, dropout=True, seed=0)
    elapsed = time.perf_counter() - t0
    ok = err < 1e-4 and elapsed < 120
    record(5, "encoder gradient check", ok, f"max relative error {err:.2e} over 240 coordinates, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    t0 = time.perf_counter()
    out = tmp_path_factory.mktemp("desk")
    manifest = build_dataset(DESK_DATA, out)
    tr = [(g, lab) for _, g, lab in manifest.scenes("train")]
    va = [(g, lab) for _, g, lab in manifest.scenes("val")]
    result = train(tr, va, DESK_TRAIN)
    weights = out / "weights.bin"
    weights.write_bytes(save_params(result.params))
    return {"dir": out, "train": tr, "val": va, "result": result, "weights": weights,
            "seconds": time.perf_counter() - t0}


def _recall(params, samples, threshold):
    x = np.stack([encode_input(g) for g, _ in samples])
    masks = predict(params, x)
    return float(np.mean([path_recall(m, lab, threshold) for m, (_, lab) in zip(masks, samples)])), masks


def test_criterion_6_desk_training(desk):
    result, threshold = desk["result"], DESK_TRAIN.threshold
    losses = [h.train_loss for h in result.history]
    sm = smoothed(losses, 5)
    monotone = bool(np.all(np.diff(sm) <= 0))
    train_recall, _ = _recall(result.params, desk["train"], threshold)
    val_recall, val_masks = _recall(result.params, desk["val"], threshold)

    severed = fallbacks = mismatched = 0
    for (g, _), mask in zip(desk["val"], val_masks):
        pruned = postprocess_mask(mask, g, threshold)
        cut = not run_planner("dijkstra", pruned.as_map()).found
        res = run_pruned("dijkstra", g, pruned)
        severed += cut
        fallbacks += res.used_fallback
        mismatched += cut != res.used_fallback or not verify_path(g, res.result.path)
    cfg = BenchConfig(str(desk["dir"]), planners=["dijkstra"], pruner=f"encoder:{desk['weights']}",
                      threshold=threshold, reps=1, split="val")
    report = run_benchmark(cfg)
    dij = report.find("ALL", "dijkstra", cfg.pruner)
    elapsed = desk["seconds"]
    ok = (
        len(desk["train"]) == 2000 and len(desk["val"]) == 250 and len(result.history) <= 50
        and monotone and train_recall >= 0.9 and val_recall >= 0.7
        and dij.iter_improvement_pct > 0 and mismatched == 0 and elapsed < 1800
    )
    record(6, "desk-scale training", ok,
           f"{len(result.history)} epochs, smoothed loss non-increasing {monotone}, "
           f"recall train {train_recall:.3f} val {val_recall:.3f} at threshold {threshold}, "
           f"Dijkstra iteration improvement {dij.iter_improvement_pct:.2f}%, "
           f"{severed} severed scenes, {fallbacks} fallbacks, {mismatched} mismatches, {elapsed:.0f}s")
    assert ok


def test_criterion_7_determinism_and_round_trips(tmp_path, scatter_60):
    cfg = DatasetConfig(DEFAULT_FAMILIES, count=20, size=(16, 16), seed=5)
    build_dataset(cfg, tmp_path / "a")
    build_dataset(cfg, tmp_path / "b")
    tree = lambda root: {p.relative_to(root).as_posix(): p.read_bytes()  # noqa: E731
                         for p in sorted(root.rglob("*")) if p.is_file()}
    data_same = tree(tmp_path / "a") == tree(tmp_path / "b")

    manifest = DatasetManifest.load(tmp_path / "a")
    tr = [(g, lab) for _, g, lab in manifest.scenes("train")]
    va = [(g, lab) for _, g, lab in manifest.scenes("val")]
    tcfg = TrainConfig(epochs=2, batch_size=8, seed=3, channel_divisor=8)
    r1, r2 = train(tr, va, tcfg), train(tr, va, tcfg)
    train_same = save_params(r1.params) == save_params(r2.params) and history_csv(r1.history) == history_csv(r2.history)

    bcfg = BenchConfig(str(scatter_60), planners=["dijkstra", "astar", "bi_astar", "bfs", "best_first"],
                       pruner="corridor:1", reps=2, limit=60)
    iters = lambda rep: [r.mean_iters for r in rep.rows]  # noqa: E731
    bench_same = iters(run_benchmark(bcfg)) == iters(run_benchmark(bcfg))

    scenes_ok = True
    for _, g, lab in manifest.scenes("train"):
        data = serialize_scene(g, lab)
        back, back_lab = parse_scene(data)
        scenes_ok &= back == g and back_lab == lab and serialize_scene(back, back_lab) == data
    blob = save_params(r1.params)
    weights_ok = load_params(blob) == r1.params and save_params(load_params(blob)) == blob

    ok = data_same and train_same and bench_same and scenes_ok and weights_ok
    record(7, "determinism and round-trips", ok,
           f"dataset {data_same}, training {train_same}, iterations {bench_same}, "
           f"scene files {scenes_ok}, weights {weights_ok}")
    assert ok


def test_criterion_8_report_fidelity(scatter_60):
    golden_ok = report_table(synthetic_report()) == GOLDEN.read_text()
    report = run_benchmark(BenchConfig(str(scatter_60), planners=["dijkstra", "astar"], pruner="corridor:3",
                                       reps=1, limit=40))
    rows = list(csv.DictReader(io.StringIO(report_csv(report))))
    base = {(r["family"], r["planner"]): r for r in rows if r["pruner"] == "none"}
    worst = 0.0
    for r in rows:
        if r["pruner"] == "none":
            continue
        b = base[r["family"], r["planner"]]
        for mean, col in (("mean_iters", "iter_improvement_pct"), ("mean_total_s", "time_improvement_pct")):
            again = improvement(float(b[mean]), float(r[mean]))
            worst = max(worst, abs(again - float(r[col])))
    ok = golden_ok and worst <= 0.01
    record(8, "report fidelity", ok, f"golden table match {golden_ok}, max recomputation gap {worst:.2e}")
    assert ok
