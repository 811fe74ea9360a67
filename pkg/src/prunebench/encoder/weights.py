"""Binary weights file.

Layout (little-endian): magic ``PPENC1``, uint32 entry count, then per entry
uint32 name length, name bytes (ASCII), uint32 rank, rank x uint32 dims and
float32 values in row-major order. The first entry, ``config``, holds
``[height, width, in_channels, c1, c2, c3, c4, d1, d2, d3]``.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .network import EncoderArch, EncoderParams

MAGIC = b"PPENC1"
CONFIG = "config"


class WeightsFormatError(ValueError):
    pass


def _entry(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("ascii")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_params(params: EncoderParams) -> bytes:
    arch = params.arch
    config = np.array((arch.height, arch.width, arch.in_channels) + tuple(arch.widths), dtype=np.float32)
    parts = [MAGIC, struct.pack("<I", len(params.arrays) + 1), _entry(CONFIG, config)]
    parts.extend(_entry(name, arr) for name, arr in params.arrays.items())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsFormatError("unexpected end of weights")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count != 1 else vals[0]

    def header(self):
        name = self.take(self.u32()).decode("ascii", errors="replace")
        rank = self.u32()
        dims = tuple(self.u32(rank)) if rank > 1 else ((self.u32(),) if rank == 1 else ())
        return name, dims

    def values(self, dims) -> np.ndarray:
        count = int(np.prod(dims)) if dims else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)


def load_params(data: bytes) -> EncoderParams:
    r = _Reader(bytes(data))
    if r.take(len(MAGIC)) != MAGIC:
        raise WeightsFormatError("bad magic: not an encoder weights file (or unsupported version)")
    count = r.u32()
    name, dims = r.header()
    if name != CONFIG or len(dims) != 1 or dims[0] != 10:
        raise WeightsFormatError(f"first entry must be {CONFIG!r} with 10 values, got {name!r} {dims}")
    cfg = [int(v) for v in r.values(dims)]
    arch = EncoderArch(cfg[0], cfg[1], tuple(cfg[3:]), cfg[2])
    expected = arch.param_shapes()
    if count != len(expected) + 1:
        raise WeightsFormatError(f"entry count {count} does not match architecture ({len(expected) + 1})")
    arrays = OrderedDict()
    for want_name, want_shape in expected.items():
        name, dims = r.header()
        if name != want_name:
            raise WeightsFormatError(f"expected entry {want_name!r}, found {name!r}")
        if dims != want_shape:
            raise WeightsFormatError(f"shape mismatch for layer {name!r}: file has {dims}, expected {want_shape}")
        arrays[name] = r.values(dims)
    if r.pos != len(r.data):
        raise WeightsFormatError(f"{len(r.data) - r.pos} trailing bytes after last entry")
    return EncoderParams(arch, arrays)
