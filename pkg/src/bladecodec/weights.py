"""Binary weight-file format shared with the trainer.

Layout (all integers little-endian):

    magic "RMLW" | u8 version | u8 kind (0 lossless, 1 lossy) | u8 depth |
    u16 patch_size | u8 pixel_norm

kind 0 continues with:
    u8 grid_precision | f32 grid_lo | f32 grid_hi | u16 z_channels |
    depth inference transforms | depth generative transforms

kind 1 continues with:
    f32 zeta | u16 z1_channels | u16 z2_channels |
    analysis | hyper_analysis | hyper_synthesis | synthesis |
    u16 n_cdfs | per cdf: u16 knots, f32 xs[knots], f32 ys[knots]

A transform is ``u16 layer_count`` followed by layer records:
    u8 kind | u16 in_ch | u16 out_ch | u16 kernel | u16 stride |
    u16 padding | u32 n_weights | f32 weights (row-major)
"""

from __future__ import annotations

import struct

import numpy as np

from .discretize import BinGrid, TabulatedCdf
from .errors import CorruptionError
from .hierarchy import HierarchicalModel, HyperpriorModel, LayerSpec

MAGIC = b"RMLW"
VERSION = 1
KIND_LOSSLESS = 0
KIND_LOSSY = 1

_KIND_CODES = {"conv": 0, "conv_transpose": 1, "elu": 2, "easn": 3,
               "residual_block": 4, "squeeze": 5, "unsqueeze": 6}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptionError("weight file truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)


def _pack_layer(out: bytearray, spec: LayerSpec) -> None:
    out += struct.pack("<BHHHHHI", _KIND_CODES[spec.kind], spec.in_ch, spec.out_ch,
                       spec.kernel, spec.stride, spec.padding, spec.weights.size)
    out += spec.weights.astype("<f4").tobytes()


def _pack_transform(out: bytearray, layers) -> None:
    out += struct.pack("<H", len(layers))
    for spec in layers:
        _pack_layer(out, spec)


_LAYER_HEAD = struct.Struct("<BHHHHHI")


def _read_layer(r: _Reader) -> LayerSpec:
    code, in_ch, out_ch, kernel, stride, padding, n = _LAYER_HEAD.unpack(r.take(_LAYER_HEAD.size))
    if code not in _KIND_NAMES:
        raise CorruptionError(f"unknown layer kind code {code}")
    return LayerSpec(_KIND_NAMES[code], in_ch, out_ch, kernel, stride, padding, r.f32s(n))


def _read_transform(r: _Reader):
    return [_read_layer(r) for _ in range(r.u16())]


def serialize_model(model) -> bytes:
    out = bytearray(MAGIC)
    if isinstance(model, HierarchicalModel):
        out += struct.pack("<BBBHB", VERSION, KIND_LOSSLESS, model.depth,
                           model.patch_size, model.pixel_norm)
        out += struct.pack("<Bff", model.grid.precision_bits, model.grid.lo, model.grid.hi)
        out += struct.pack("<H", model.z_channels)
        for t in model.inference:
            _pack_transform(out, t)
        for t in model.generative:
            _pack_transform(out, t)
    elif isinstance(model, HyperpriorModel):
        out += struct.pack("<BBBHB", VERSION, KIND_LOSSY, 2, model.patch_size, model.pixel_norm)
        out += struct.pack("<fHH", model.zeta, model.z1_channels, model.z2_channels)
        for t in (model.analysis, model.hyper_analysis, model.hyper_synthesis, model.synthesis):
            _pack_transform(out, t)
        out += struct.pack("<H", len(model.prior_cdfs))
        for cdf in model.prior_cdfs:
            out += struct.pack("<H", cdf.xs.size)
            out += cdf.xs.astype("<f4").tobytes()
            out += cdf.ys.astype("<f4").tobytes()
    else:
        raise TypeError(f"cannot serialize {type(model)!r}")
    return bytes(out)


def deserialize_model(blob: bytes):
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CorruptionError("not a weight file")
    version, kind, depth, patch_size, pixel_norm = struct.unpack("<BBBHB", r.take(6))
    if version != VERSION:
        raise CorruptionError(f"unsupported weight file version {version}")
    if kind == KIND_LOSSLESS:
        precision, lo, hi = struct.unpack("<Bff", r.take(9))
        z_channels = r.u16()
        inference = [_read_transform(r) for _ in range(depth)]
        generative = [_read_transform(r) for _ in range(depth)]
        model = HierarchicalModel(depth, patch_size, z_channels, inference, generative,
                                  BinGrid(precision, lo, hi), pixel_norm)
    elif kind == KIND_LOSSY:
        zeta, z1, z2 = struct.unpack("<fHH", r.take(8))
        transforms = [_read_transform(r) for _ in range(4)]
        cdfs = []
        for _ in range(r.u16()):
            n = r.u16()
            xs = r.f32s(n)
            ys = r.f32s(n)
            cdfs.append(TabulatedCdf(xs.astype(np.float64), ys.astype(np.float64)))
        model = HyperpriorModel(patch_size, z1, z2, *transforms, cdfs,
                                zeta=zeta, pixel_norm=pixel_norm)
    else:
        raise CorruptionError(f"unknown model kind {kind}")
    if r.pos != len(blob):
        raise CorruptionError("trailing bytes in weight file")
    return model


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
