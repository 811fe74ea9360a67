"""Convolutional encoder built from plain numpy.

Tensors are NHWC. Convolutions use "same" padding with stride 1 and are
computed by im2col; the pooling layer is a non-overlapping 3x3 max.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..grid import GridMap

KEEP_PROB = 0.7
BN_MOMENTUM = 0.9
BN_EPS = 1e-5
LEAKY_SLOPE = 0.3
POOL = 3
KERNEL = 3

FULL_WIDTHS = (64, 128, 256, 512, 256, 512, 1024)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderArch:
    """Layer widths for the stack: four convs (c1..c4) and three hidden dense layers (d1..d3)."""

    height: int = 24
    width: int = 24
    widths: tuple = tuple(w // 4 for w in FULL_WIDTHS)
    in_channels: int = 3

    @classmethod
    def scaled(cls, height: int, width: int, divisor: int = 4) -> "EncoderArch":
        return cls(height, width, tuple(max(1, w // divisor) for w in FULL_WIDTHS))

    @classmethod
    def full(cls, height: int = 60, width: int = 60) -> "EncoderArch":
        return cls(height, width, FULL_WIDTHS)

    @property
    def pooled(self) -> tuple[int, int]:
        return self.height // POOL, self.width // POOL

    @property
    def out_dim(self) -> int:
        return self.height * self.width

    def param_shapes(self) -> "OrderedDict[str, tuple]":
        c1, c2, c3, c4, d1, d2, d3 = self.widths
        ph, pw = self.pooled
        s = OrderedDict()
        s["conv1.w"] = (KERNEL, KERNEL, self.in_channels, c1)
        s["conv1.b"] = (c1,)
        _bn(s, "bn1", c1)
        s["conv2.w"] = (KERNEL, KERNEL, c1, c2)
        s["conv2.b"] = (c2,)
        s["conv3.w"] = (KERNEL, KERNEL, c2, c3)
        s["conv3.b"] = (c3,)
        _bn(s, "bn3", c3)
        s["conv4.w"] = (KERNEL, KERNEL, c3, c4)
        s["conv4.b"] = (c4,)
        s["dense1.w"] = (ph * pw * c4, d1)
        s["dense1.b"] = (d1,)
        _bn(s, "bn5", d1)
        s["dense2.w"] = (d1, d2)
        s["dense2.b"] = (d2,)
        _bn(s, "bn6", d2)
        s["dense3.w"] = (d2, d3)
        s["dense3.b"] = (d3,)
        _bn(s, "bn7", d3)
        s["out.w"] = (d3, self.out_dim)
        s["out.b"] = (self.out_dim,)
        return s

    def layers(self) -> list[tuple]:
        return [
            ("conv", "conv1"), ("bn", "bn1"), ("relu",),
            ("conv", "conv2"), ("relu",), ("dropout",),
            ("pool",),
            ("conv", "conv3"), ("bn", "bn3"), ("relu",),
            ("conv", "conv4"), ("relu",), ("dropout",),
            ("flatten",),
            ("dense", "dense1"), ("bn", "bn5"), ("leaky",), ("dropout",),
            ("dense", "dense2"), ("bn", "bn6"), ("leaky",), ("dropout",),
            ("dense", "dense3"), ("bn", "bn7"), ("leaky",), ("dropout",),
            ("dense", "out"), ("tanh",),
        ]  # fmt: skip


def _bn(shapes, name, n):
    shapes[f"{name}.gamma"] = (n,)
    shapes[f"{name}.beta"] = (n,)
    shapes[f"{name}.mean"] = (n,)
    shapes[f"{name}.var"] = (n,)


def is_running_stat(name: str) -> bool:
    return name.endswith(".mean") or name.endswith(".var")


class EncoderParams:
    """All arrays of one network plus its architecture."""

    def __init__(self, arch: EncoderArch, arrays: "OrderedDict[str, np.ndarray]"):
        expected = arch.param_shapes()
        if list(arrays) != list(expected):
            raise ShapeError(f"parameter names {list(arrays)} do not match architecture")
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise ShapeError(f"{name}: shape {arrays[name].shape}, expected {shape}")
        self.arch = arch
        self.arrays = arrays

    @classmethod
    def init(cls, arch: EncoderArch, rng: np.random.Generator, dtype=np.float32) -> "EncoderParams":
        arrays = OrderedDict()
        for name, shape in arch.param_shapes().items():
            kind = name.rsplit(".", 1)[1]
            if kind == "w":
                fan_in = int(np.prod(shape[:-1]))
                gain = 3.0 if name == "out.w" else 6.0
                limit = np.sqrt(gain / fan_in)
                arrays[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
            elif kind in ("gamma", "var"):
                arrays[name] = np.ones(shape, dtype=dtype)
            else:
                arrays[name] = np.zeros(shape, dtype=dtype)
        return cls(arch, arrays)

    @property
    def dtype(self):
        return self.arrays["conv1.w"].dtype

    def trainable(self) -> list[str]:
        return [k for k in self.arrays if not is_running_stat(k)]

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(self.arch, OrderedDict((k, v.astype(dtype)) for k, v in self.arrays.items()))

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.arch, OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def __getitem__(self, name):
        return self.arrays[name]

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return (
            self.arch == other.arch
            and list(self.arrays) == list(other.arrays)
            and all(
                a.dtype == b.dtype and np.array_equal(a, b)
                for a, b in zip(self.arrays.values(), other.arrays.values())
            )
        )

    def count(self) -> int:
        return sum(v.size for k, v in self.arrays.items() if not is_running_stat(k))


def encode_input(grid: GridMap, dtype=np.float32) -> np.ndarray:
    """(H, W, 3) tensor: occupancy, start one-hot, goal one-hot."""
    x = np.zeros(grid.shape + (3,), dtype=dtype)
    x[..., 0] = grid.blocked
    x[grid.start[0], grid.start[1], 1] = 1.0
    x[grid.goal[0], grid.goal[1], 2] = 1.0
    return x


def target_grid(shape, label, dtype=np.float32) -> np.ndarray:
    """+1 on label cells, -1 elsewhere."""
    y = -np.ones(shape, dtype=dtype)
    for r, c in label:
        y[r, c] = 1.0
    return y


# ---------------------------------------------------------------------------
# primitive ops: each forward returns (out, cache); backward(dout, cache) returns dx and grads


def conv_forward(x, w, b):
    n, h, wd, c = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # n, h, w, c, k, k
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * wd, k * k * c)
    wmat = w.reshape(k * k * c, -1)
    out = (cols @ wmat + b).reshape(n, h, wd, -1)
    return out, (x.shape, cols, w)


def conv_backward(dout, cache):
    (n, h, wd, c), cols, w = cache
    k = w.shape[0]
    pad = k // 2
    cout = w.shape[-1]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, h, wd, k, k, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + h, j : j + wd, :] += dcols[:, :, :, i, j, :]
    return dxp[:, pad : pad + h, pad : pad + wd, :], dw, db


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def bn_forward(x, gamma, beta, mean, var, train):
    """Batch norm over every axis but the last. Returns (out, cache, batch stats or None)."""
    axes = tuple(range(x.ndim - 1))
    if train:
        mu = x.mean(axis=axes)
        sigma2 = x.var(axis=axes)
    else:
        mu, sigma2 = mean, var
    inv = 1.0 / np.sqrt(sigma2 + BN_EPS)
    xhat = (x - mu) * inv
    out = gamma * xhat + beta
    return out, (xhat, inv, gamma, train), (mu, sigma2) if train else None


def bn_backward(dout, cache):
    xhat, inv, gamma, train = cache
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def pool_forward(x):
    n, h, w, c = x.shape
    ph, pw = h // POOL, w // POOL
    xc = x[:, : ph * POOL, : pw * POOL, :]
    blocks = xc.reshape(n, ph, POOL, pw, POOL, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ph, pw, c, POOL * POOL)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def pool_backward(dout, cache):
    (n, h, w, c), arg = cache
    ph, pw = dout.shape[1:3]
    blocks = np.zeros(dout.shape + (POOL * POOL,), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros((n, h, w, c), dtype=dout.dtype)
    dx[:, : ph * POOL, : pw * POOL, :] = (
        blocks.reshape(n, ph, pw, c, POOL, POOL).transpose(0, 1, 4, 2, 5, 3).reshape(n, ph * POOL, pw * POOL, c)
    )
    return dx


# ---------------------------------------------------------------------------


@dataclass
class ForwardState:
    """Per-call scratch for a training-mode pass.

    ``masks`` maps layer position -> dropout mask (already divided by the keep
    probability). Supplying masks freezes dropout; otherwise they are drawn
    from ``rng`` and recorded.
    """

    rng: Optional[np.random.Generator] = None
    masks: Optional[dict] = None
    dropout: bool = True

    def __post_init__(self):
        self.caches = []
        self.batch_stats = {}
        if self.masks is None:
            self.masks = {}


def forward(params: EncoderParams, x: np.ndarray, train: bool = False, state: Optional[ForwardState] = None):
    """Run the stack on a batch ``x`` of shape (N, H, W, 3); returns (N, H, W) in [-1, 1].

    Inference (``train=False``) uses running batch-norm statistics and no
    dropout. Training mode needs ``state`` for dropout randomness and caches.
    """
    arch = params.arch
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (arch.height, arch.width, arch.in_channels):
        raise ShapeError(
            f"input shape {x.shape[1:]} does not match encoder input "
            f"{(arch.height, arch.width, arch.in_channels)}"
        )
    if train and state is None:
        raise ValueError("training-mode forward needs a ForwardState")
    p = params.arrays
    h = x.astype(params.dtype, copy=False)
    for pos, layer in enumerate(arch.layers()):
        op = layer[0]
        cache = None
        if op == "conv":
            h, cache = conv_forward(h, p[layer[1] + ".w"], p[layer[1] + ".b"])
        elif op == "dense":
            h, cache = dense_forward(h, p[layer[1] + ".w"], p[layer[1] + ".b"])
        elif op == "bn":
            n = layer[1]
            h, cache, stats = bn_forward(
                h, p[n + ".gamma"], p[n + ".beta"], p[n + ".mean"], p[n + ".var"], train
            )
            if train:
                state.batch_stats[n] = stats
        elif op == "relu":
            cache = h > 0
            h = h * cache
        elif op == "leaky":
            cache = np.where(h > 0, 1.0, LEAKY_SLOPE).astype(h.dtype)
            h = h * cache
        elif op == "dropout":
            if train and state.dropout:
                mask = state.masks.get(pos)
                if mask is None:
                    mask = (state.rng.random(h.shape) < KEEP_PROB).astype(h.dtype) / np.asarray(
                        KEEP_PROB, dtype=h.dtype
                    )
                    state.masks[pos] = mask
                cache = mask
                h = h * mask
        elif op == "pool":
            h, cache = pool_forward(h)
        elif op == "flatten":
            cache = h.shape
            h = h.reshape(h.shape[0], -1)
        elif op == "tanh":
            h = np.tanh(h)
            cache = h
        if train:
            state.caches.append(cache)
    return h.reshape(-1, arch.height, arch.width)


def backward(params: EncoderParams, dout: np.ndarray, state: ForwardState) -> dict:
    """Gradients of every trainable array given d(loss)/d(output) of shape (N, H, W)."""
    arch = params.arch
    grads = {}
    g = dout.reshape(dout.shape[0], -1)
    for layer, cache in zip(reversed(arch.layers()), reversed(state.caches)):
        op = layer[0]
        if op == "conv":
            g, dw, db = conv_backward(g, cache)
            grads[layer[1] + ".w"], grads[layer[1] + ".b"] = dw, db
        elif op == "dense":
            g, dw, db = dense_backward(g, cache)
            grads[layer[1] + ".w"], grads[layer[1] + ".b"] = dw, db
        elif op == "bn":
            g, dgamma, dbeta = bn_backward(g, cache)
            grads[layer[1] + ".gamma"], grads[layer[1] + ".beta"] = dgamma, dbeta
        elif op in ("relu", "leaky"):
            g = g * cache
        elif op == "dropout":
            if cache is not None:
                g = g * cache
        elif op == "pool":
            g = pool_backward(g, cache)
        elif op == "flatten":
            g = g.reshape(cache)
        elif op == "tanh":
            g = g * (1.0 - cache * cache)
    return grads


def update_running_stats(params: EncoderParams, batch_stats: dict, momentum: float = BN_MOMENTUM):
    for name, (mu, sigma2) in batch_stats.items():
        mean = params.arrays[name + ".mean"]
        var = params.arrays[name + ".var"]
        mean *= momentum
        mean += (1.0 - momentum) * mu.astype(mean.dtype)
        var *= momentum
        var += (1.0 - momentum) * sigma2.astype(var.dtype)


def predict(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Inference-mode masks for a stack of inputs.

    Samples are evaluated one at a time so results do not depend on how
    callers batch their inputs.
    """
    if x.ndim == 3:
        x = x[None]
    out = np.empty((x.shape[0], params.arch.height, params.arch.width), dtype=params.dtype)
    for i in range(x.shape[0]):
        out[i] = forward(params, x[i : i + 1], train=False)[0]
    return out
