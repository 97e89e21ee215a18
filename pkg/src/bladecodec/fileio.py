"""Netpbm image I/O and the small CSV formats used by the CLI.

Images: binary PPM (P6, 8-bit RGB) and binary PGM (P5, 8-bit masks or
16-bit probability maps, big-endian per the netpbm convention).
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptionError


def _read_header(blob: bytes, magic: bytes):
    if not blob.startswith(magic):
        raise CorruptionError(f"expected {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptionError("malformed netpbm header")
        fields.append(int(blob[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit P6 file as (3, H, W) uint8."""
    blob = open(path, "rb").read()
    w, h, maxval, pos = _read_header(blob, b"P6")
    if maxval != 255:
        raise CorruptionError("only 8-bit PPM supported")
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=pos)
    return data.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("image must be (3, H, W)")
    h, w = img.shape[1:]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(img.transpose(1, 2, 0).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 file: uint8 for maxval 255, uint16 (big-endian) above."""
    blob = open(path, "rb").read()
    w, h, maxval, pos = _read_header(blob, b"P5")
    if maxval == 255:
        data = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos)
    elif maxval == 65535:
        data = np.frombuffer(blob, dtype=">u2", count=h * w, offset=pos).astype(np.uint16)
    else:
        raise CorruptionError(f"unsupported PGM maxval {maxval}")
    return data.reshape(h, w).copy()


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("mask must be (H, W)")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        if maxval == 255:
            fh.write(img.astype(np.uint8).tobytes())
        elif maxval == 65535:
            fh.write(img.astype(">u2").tobytes())
        else:
            raise ValueError(f"unsupported maxval {maxval}")


def read_binary_mask(path) -> np.ndarray:
    """8-bit PGM to a {0,1} mask (any nonzero pixel counts as blade)."""
    return (read_pgm(path) > 0).astype(np.uint8)


def write_binary_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def read_probability_mask(path) -> np.ndarray:
    """16-bit PGM to probabilities in [0, 1]."""
    raw = read_pgm(path)
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return raw.astype(np.float64) / scale


def write_probability_mask(path, probs: np.ndarray) -> None:
    q = np.clip(np.rint(np.asarray(probs, dtype=np.float64) * 65535.0), 0, 65535)
    write_pgm(path, q.astype(np.uint16), maxval=65535)


def read_similarities(path) -> np.ndarray:
    """One similarity value per line."""
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                values.append(float(line))
    return np.asarray(values, dtype=np.float64)


def write_curve(path, taus, ratios, auc: float) -> None:
    with open(path, "w") as fh:
        fh.write("tau,ratio\n")
        for t, r in zip(taus, ratios):
            fh.write(f"{t:.6f},{r:.6f}\n")
        fh.write(f"# auc,{auc:.6f}\n")
