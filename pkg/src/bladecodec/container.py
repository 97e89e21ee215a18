"""Bit-exact on-disk container for coded images.

Layout (little-endian integers, trailing CRC-32 over everything before it):

    magic "RMLC" | u8 version | u8 mode | u32 width | u32 height |
    u16 patch_size | u16 blade_model_id | u16 bg_model_id |
    u64 prng_seed | u16 patches_per_run |
    u32 mask_len | mask bytes |
    u32 stream_count | u32 length per stream | stream bytes ... |
    u32 crc32

Modes: 0 lossy background + lossy blade, 1 lossy background + lossless
blade, 2 whole image lossy, 3 whole image lossless.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

from .errors import CorruptionError

MAGIC = b"RMLC"
VERSION = 1

MODE_LOSSY_LOSSY = 0
MODE_LOSSY_LOSSLESS = 1
MODE_SINGLE_LOSSY = 2
MODE_SINGLE_LOSSLESS = 3
MODES = (MODE_LOSSY_LOSSY, MODE_LOSSY_LOSSLESS, MODE_SINGLE_LOSSY, MODE_SINGLE_LOSSLESS)

_HEADER = struct.Struct("<4sBBIIHHHQH")


@dataclass
class Container:
    mode: int
    width: int
    height: int
    patch_size: int
    blade_model_id: int
    bg_model_id: int
    prng_seed: int
    patches_per_run: int
    mask: bytes
    streams: list[bytes] = field(default_factory=list)


def serialize_container(c: Container) -> bytes:
    if c.mode not in MODES:
        raise ValueError(f"unknown mode {c.mode}")
    out = bytearray(_HEADER.pack(MAGIC, VERSION, c.mode, c.width, c.height, c.patch_size,
                                 c.blade_model_id, c.bg_model_id, c.prng_seed,
                                 c.patches_per_run))
    out += struct.pack("<I", len(c.mask))
    out += c.mask
    out += struct.pack("<I", len(c.streams))
    for s in c.streams:
        out += struct.pack("<I", len(s))
    for s in c.streams:
        out += s
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def parse_container(blob: bytes) -> Container:
    if len(blob) < _HEADER.size + 12:
        raise CorruptionError("container shorter than its fixed header")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("container checksum mismatch")
    magic, version, mode, width, height, patch_size, blade_id, bg_id, seed, ppr = \
        _HEADER.unpack(blob[:_HEADER.size])
    if magic != MAGIC:
        raise CorruptionError("not a coded container")
    if version != VERSION:
        raise CorruptionError(f"unsupported container version {version}")
    if mode not in MODES:
        raise CorruptionError(f"unknown container mode {mode}")
    if not width or not height or not patch_size:
        raise CorruptionError("degenerate container dimensions")
    pos = _HEADER.size

    def need(n):
        if pos + n > len(body):
            raise CorruptionError("container truncated")

    need(4)
    mask_len = struct.unpack_from("<I", body, pos)[0]
    pos += 4
    need(mask_len)
    mask = body[pos:pos + mask_len]
    pos += mask_len
    need(4)
    count = struct.unpack_from("<I", body, pos)[0]
    pos += 4
    if count > len(body):
        raise CorruptionError("implausible stream count")
    need(4 * count)
    lengths = list(struct.unpack_from(f"<{count}I", body, pos)) if count else []
    pos += 4 * count
    streams = []
    for n in lengths:
        need(n)
        streams.append(body[pos:pos + n])
        pos += n
    if pos != len(body):
        raise CorruptionError("container length does not match its declared sum")
    return Container(mode, width, height, patch_size, blade_id, bg_id, seed, ppr,
                     bytes(mask), streams)
