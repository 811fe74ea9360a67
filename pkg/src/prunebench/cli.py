"""Command-line entry point: ``prunebench {gen,train,gradcheck,bench,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .grid import SceneFormatError
from .planners import PLANNERS, HeuristicKind, PlannerError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAILURE = 0, 1, 2, 3

log = logging.getLogger("prunebench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prunebench", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate and label a scene dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=_size, default=(60, 60))
    g.add_argument("--families", type=_csv_list, default=["scatter", "bars", "rooms", "blobs", "maze"])
    g.add_argument("--count", type=int, default=512, help="scenes per family")
    g.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the encoder on a dataset")
    t.add_argument("--manifest", required=True, help="dataset directory or manifest.json")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--divisor", type=int, default=4, help="divide the layer widths by this factor")
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--threshold", type=float, default=0.0)
    t.add_argument("--dilation", type=int, default=1)
    t.add_argument("--out", required=True)

    c = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--coords", type=int, default=240)
    c.add_argument("--no-dropout", action="store_true")
    c.add_argument("--tolerance", type=float, default=1e-4)

    b = sub.add_parser("bench", help="baseline vs pruned planner benchmark")
    b.add_argument("--manifest", required=True)
    b.add_argument("--planners", type=_csv_list, default=list(PLANNERS))
    b.add_argument("--pruner", default="none", help="none | encoder:<weights> | corridor:<radius>")
    b.add_argument("--heuristic", choices=[k.value for k in HeuristicKind], default=None)
    b.add_argument("--threshold", type=float, default=0.0)
    b.add_argument("--dilation", type=int, default=1)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--split", choices=("train", "val", "test"), default="test")
    b.add_argument("--limit", type=int, default=None, help="benchmark at most this many scenes")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)

    r = sub.add_parser("report", help="re-render a saved report.json")
    r.add_argument("input", help="report.json written by bench")
    r.add_argument("--out", required=True)
    return p


def _gen(args):
    from .scenarios import DatasetConfig, build_dataset, family_by_name

    try:
        families = [family_by_name(name) for name in args.families]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = DatasetConfig(families, args.count, args.size, args.seed, args.connectivity, workers=args.workers)
    manifest = build_dataset(cfg, args.out)
    sizes = {k: len(v) for k, v in manifest.splits.items()}
    print(f"wrote {sum(sizes.values())} scenes to {args.out} {sizes}; label failures: {manifest.label_failures}")
    return EXIT_OK


def _train(args):
    from .encoder.training import TrainConfig, train
    from .encoder.weights import save_params
    from .scenarios import DatasetManifest

    manifest = DatasetManifest.load(args.manifest)
    tr = [(g, lab) for _, g, lab in manifest.scenes("train")]
    va = [(g, lab) for _, g, lab in manifest.scenes("val")]
    if not tr:
        raise FileNotFoundError(f"{args.manifest}: empty training split")
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
        channel_divisor=args.divisor, threads=args.threads, threshold=args.threshold, dilation=args.dilation,
    )
    result = train(tr, va, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "weights.bin").write_bytes(save_params(result.params))
    (out / "history.csv").write_text(result.history_csv())
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs: train_loss {last.train_loss:.5f} val_loss {last.val_loss:.5f} "
          f"val_recall {last.val_recall:.4f}; weights in {out / 'weights.bin'}")
    return EXIT_OK


def _gradcheck(args):
    from .encoder.training import grad_check

    err = grad_check(coords=args.coords, dropout=not args.no_dropout, seed=args.seed)
    ok = err < args.tolerance
    print(f"max relative error {err:.3e} over {args.coords} coordinates: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAILURE


def _bench(args):
    from .bench import BenchConfig, run_benchmark

    try:
        cfg = BenchConfig(
            manifest=args.manifest, planners=args.planners, pruner=args.pruner,
            heuristic=HeuristicKind(args.heuristic) if args.heuristic else None, reps=args.reps,
            out_dir=args.out, seed=args.seed, threshold=args.threshold, dilation=args.dilation,
            split=args.split, limit=args.limit,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_benchmark(cfg)
    from .bench import report_table

    sys.stdout.write(report_table(report))
    return EXIT_OK


def _report(args):
    from .bench import BenchReport, emit_report, report_table

    report = BenchReport.from_json(Path(args.input).read_text())
    emit_report(report, args.out)
    sys.stdout.write(report_table(report))
    return EXIT_OK


COMMANDS = {"gen": _gen, "train": _train, "gradcheck": _gradcheck, "bench": _bench, "report": _report}


def main(argv=None) -> int:
    from .bench import BenchmarkError
    from .encoder.training import DivergenceError
    from .encoder.weights import WeightsFormatError
    from .scenarios import GenerationError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"prunebench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, BenchmarkError) as exc:
        print(f"prunebench: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, SceneFormatError, WeightsFormatError, GenerationError, PlannerError, KeyError, ValueError) as exc:
        print(f"prunebench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
