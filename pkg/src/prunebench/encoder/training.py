"""Loss, mini-batch Adam training and finite-difference gradient checking."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..grid import GridMap
from ..pruning import DEFAULT_DILATION, DEFAULT_THRESHOLD, path_recall
from .network import (
    EncoderArch,
    EncoderParams,
    ForwardState,
    backward,
    encode_input,
    forward,
    predict,
    target_grid,
    update_running_stats,
)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error between mask predictions and +/-1 targets."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_for_label(pred: np.ndarray, grid: GridMap, label) -> float:
    return loss(pred, target_grid(grid.shape, label))


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    channel_divisor: int = 4
    dropout: bool = True
    threads: int = 1
    threshold: float = DEFAULT_THRESHOLD
    dilation: int = DEFAULT_DILATION

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_recall: float


@dataclass
class TrainResult:
    params: EncoderParams
    history: list = field(default_factory=list)

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "val_recall"])
    for rec in history:
        w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss), repr(rec.val_recall)])
    return buf.getvalue()


def stack_samples(samples, dtype=np.float32):
    """``samples`` yields (map, label); returns inputs (N,H,W,3), targets (N,H,W), labels."""
    xs, ys, labels = [], [], []
    for grid, label in samples:
        xs.append(encode_input(grid, dtype))
        ys.append(target_grid(grid.shape, label, dtype))
        labels.append(label)
    return np.stack(xs), np.stack(ys), labels


def evaluate(params: EncoderParams, x, y, labels, threshold=DEFAULT_THRESHOLD, dilation=DEFAULT_DILATION):
    """Inference-mode (mean loss, mean path-cell recall)."""
    if len(x) == 0:
        return math.nan, math.nan
    pred = predict(params, x)
    recalls = [path_recall(m, lab, threshold, dilation) for m, lab in zip(pred, labels)]
    return loss(pred, y), float(np.mean(recalls))


class Adam:
    def __init__(self, params: EncoderParams, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(params[k]) for k in params.trainable()}
        self.v = {k: np.zeros_like(params[k]) for k in params.trainable()}

    def step(self, params: EncoderParams, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * math.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            params.arrays[k] -= (scale * m / (np.sqrt(v) + self.eps)).astype(params.arrays[k].dtype)


def train(train_samples, val_samples, cfg: TrainConfig, arch: Optional[EncoderArch] = None) -> TrainResult:
    """Fit an encoder on (map, label) pairs. Deterministic for a given ``cfg.seed``."""
    with threadpool_limits(limits=cfg.threads):
        return _train(train_samples, val_samples, cfg, arch)


def _train(train_samples, val_samples, cfg, arch):
    x, y, _ = stack_samples(train_samples)
    if len(x) == 0:
        raise ValueError("training split is empty")
    vx, vy, vlabels = stack_samples(val_samples) if val_samples else (np.zeros((0,)), None, [])
    if arch is None:
        arch = EncoderArch.scaled(x.shape[1], x.shape[2], cfg.channel_divisor)

    init_seq, drop_seq, order_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    params = EncoderParams.init(arch, np.random.default_rng(init_seq))
    drop_rng = np.random.default_rng(drop_seq)
    order_rng = np.random.default_rng(order_seq)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

    history = []
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[lo : lo + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            state = ForwardState(rng=drop_rng, dropout=cfg.dropout)
            out = forward(params, xb, train=True, state=state)
            diff = out - yb
            batch_loss = float(np.mean(np.square(diff, dtype=np.float64)))
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"divergence: non-finite loss at epoch {epoch}, batch {b}")
            grads = backward(params, (2.0 / diff.size) * diff, state)
            opt.step(params, grads)
            update_running_stats(params, state.batch_stats)
            total += batch_loss * len(idx)
        val_loss, val_recall = evaluate(params, vx, vy, vlabels, cfg.threshold, cfg.dilation)
        rec = EpochRecord(epoch, total / n, val_loss, val_recall)
        history.append(rec)
        log.info("epoch %d train_loss %.5f val_loss %.5f val_recall %.4f", *vars(rec).values())
    return TrainResult(params, history)


def smoothed(values: Sequence[float], window: int = 5) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries are dropped."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window


# ---------------------------------------------------------------------------
# gradient check

GRADCHECK_WIDTHS = (8, 8, 8, 8, 16, 16, 16)


def reduced_arch(size: int = 6) -> EncoderArch:
    return EncoderArch(size, size, GRADCHECK_WIDTHS)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    params: Optional[EncoderParams] = None,
    x: Optional[np.ndarray] = None,
    target: Optional[np.ndarray] = None,
    *,
    coords: int = 240,
    step: float = 1e-4,
    dropout: bool = True,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    Runs in float64 in training mode (batch statistics). Dropout masks drawn on
    the first pass are frozen for every perturbed evaluation. Coordinates are
    sampled across all trainable arrays, at least one per array.
    """
    rng = np.random.default_rng(seed)
    if params is None:
        params = EncoderParams.init(reduced_arch(), rng, np.float64)
        for k, a in params.arrays.items():
            if k.endswith(".gamma"):
                a[:] = rng.uniform(0.5, 1.5, a.shape)
            elif k.endswith(".beta"):
                a[:] = rng.uniform(-0.5, 0.5, a.shape)
    params = params.astype(np.float64)
    arch = params.arch
    if x is None:
        x = rng.standard_normal((4, arch.height, arch.width, arch.in_channels))
    if target is None:
        target = np.where(rng.random((x.shape[0], arch.height, arch.width)) < 0.2, 1.0, -1.0)
    x = np.asarray(x, dtype=np.float64)

    state = ForwardState(rng=np.random.default_rng(seed + 1), dropout=dropout)
    out = forward(params, x, train=True, state=state)
    grads = backward(params, 2.0 * (out - target) / out.size, state)
    frozen = dict(state.masks)

    def objective():
        s = ForwardState(masks=dict(frozen), dropout=dropout)
        return loss(forward(params, x, train=True, state=s), target)

    names = params.trainable()
    picks = [(name, None) for name in names]
    sizes = np.array([params[n].size for n in names], dtype=float)
    for i in rng.choice(len(names), size=max(0, coords - len(names)), p=sizes / sizes.sum()):
        picks.append((names[i], None))

    worst = 0.0
    for name, _ in picks:
        a = params.arrays[name]
        idx = tuple(int(rng.integers(s)) for s in a.shape)
        old = a[idx]
        a[idx] = old + step
        lp = objective()
        a[idx] = old - step
        lm = objective()
        a[idx] = old
        numeric = (lp - lm) / (2.0 * step)
        worst = max(worst, relative_error(float(grads[name][idx]), numeric))
    return worst
