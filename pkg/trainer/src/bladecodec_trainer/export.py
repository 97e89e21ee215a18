"""Writer for the shared binary weight-file format.

This mirrors the documented layout byte for byte (magic "RMLW",
version 1, little-endian integers, float32 weights row-major); the
codec package is the reader.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RMLW"
VERSION = 1
KIND_LOSSLESS = 0
KIND_LOSSY = 1

PIXEL_NORM_CENTERED = 0
PIXEL_NORM_UNIT = 1

_KIND_CODES = {"conv": 0, "conv_transpose": 1, "elu": 2, "easn": 3,
               "residual_block": 4, "squeeze": 5, "unsqueeze": 6}


def _pack_transform(out: bytearray, records) -> None:
    out += struct.pack("<H", len(records))
    for r in records:
        w = np.asarray(r["weights"], dtype="<f4")
        out += struct.pack("<BHHHHHI", _KIND_CODES[r["kind"]], r["in_ch"], r["out_ch"],
                           r["kernel"], r["stride"], r["padding"], w.size)
        out += w.tobytes()


def write_bitswap(path, depth, patch_size, z_channels, inference, generative,
                  grid_precision=10, grid_lo=-8.0, grid_hi=8.0,
                  pixel_norm=PIXEL_NORM_CENTERED) -> None:
    """inference/generative: one record list per level."""
    out = bytearray(MAGIC)
    out += struct.pack("<BBBHB", VERSION, KIND_LOSSLESS, depth, patch_size, pixel_norm)
    out += struct.pack("<Bff", grid_precision, grid_lo, grid_hi)
    out += struct.pack("<H", z_channels)
    for t in inference:
        _pack_transform(out, t)
    for t in generative:
        _pack_transform(out, t)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def write_hyperprior(path, patch_size, z1_channels, z2_channels, zeta,
                     analysis, hyper_analysis, hyper_synthesis, synthesis,
                     cdf_tables, pixel_norm=PIXEL_NORM_UNIT) -> None:
    """cdf_tables: one (xs, ys) pair per deep-latent channel."""
    out = bytearray(MAGIC)
    out += struct.pack("<BBBHB", VERSION, KIND_LOSSY, 2, patch_size, pixel_norm)
    out += struct.pack("<fHH", zeta, z1_channels, z2_channels)
    for t in (analysis, hyper_analysis, hyper_synthesis, synthesis):
        _pack_transform(out, t)
    out += struct.pack("<H", len(cdf_tables))
    for xs, ys in cdf_tables:
        xs = np.asarray(xs, dtype="<f4")
        ys = np.asarray(ys, dtype="<f4")
        out += struct.pack("<H", xs.size)
        out += xs.tobytes()
        out += ys.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))
