"""Training patches: synthetic textures or a directory of PPM files."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def synthetic_textures(n: int, patch_size: int, seed: int = 0) -> np.ndarray:
    """(n, 3, ps, ps) uint8 patches: smooth gradients, blobs and stripes."""
    rng = np.random.default_rng(seed)
    ps = patch_size
    ys, xs = np.mgrid[0:ps, 0:ps].astype(np.float64) / max(ps - 1, 1)
    out = np.empty((n, 3, ps, ps), dtype=np.uint8)
    for i in range(n):
        base = np.zeros((3, ps, ps))
        for c in range(3):
            a, b, o = rng.uniform(-1, 1, 3)
            base[c] = a * xs + b * ys + o
        kind = rng.integers(0, 3)
        if kind == 0:  # soft blob
            cy, cx = rng.uniform(0.2, 0.8, 2)
            r = rng.uniform(0.1, 0.4)
            blob = np.exp(-(((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * r * r)))
            base += rng.uniform(-1, 1, (3, 1, 1)) * blob
        elif kind == 1:  # stripes
            freq = rng.uniform(1, 4)
            phase = rng.uniform(0, np.pi)
            axis = xs if rng.random() < 0.5 else ys
            base += rng.uniform(-0.5, 0.5, (3, 1, 1)) * np.sin(2 * np.pi * freq * axis + phase)
        base = (base - base.min()) / max(np.ptp(base), 1e-9)
        pix = base * rng.uniform(140, 250) + rng.uniform(0, 60)
        pix += rng.normal(0, rng.uniform(1, 4), pix.shape)
        out[i] = np.clip(pix, 0, 255).astype(np.uint8)
    return out


def _read_ppm(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if not blob.startswith(b"P6"):
        raise ValueError(f"{path} is not a binary PPM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    data = np.frombuffer(blob, np.uint8, count=h * w * 3, offset=pos + 1)
    return data.reshape(h, w, 3).transpose(2, 0, 1).copy()


def patches_from_dir(path, patch_size: int, per_image: int = 8, seed: int = 0) -> np.ndarray:
    """Random crops from every PPM under ``path``."""
    rng = np.random.default_rng(seed)
    crops = []
    for p in sorted(Path(path).glob("*.ppm")):
        img = _read_ppm(p)
        h, w = img.shape[1:]
        if h < patch_size or w < patch_size:
            continue
        for _ in range(per_image):
            r = int(rng.integers(0, h - patch_size + 1))
            c = int(rng.integers(0, w - patch_size + 1))
            crops.append(img[:, r:r + patch_size, c:c + patch_size])
    if not crops:
        raise ValueError(f"no usable PPM patches under {path}")
    return np.stack(crops)
