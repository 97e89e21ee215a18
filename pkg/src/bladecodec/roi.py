"""ROI orchestration: patch layout, mask coding, parallel run planning
and dual-mode region compression.

An image is split into a grid of equal patches (mirror padded at the
right/bottom edges).  A patch counts as blade if any source pixel under
it is blade.  Background patches are always coded with the lossy model;
blade patches go through either a second lossy model or the lossless
coder, whose bits-back runs are seeded with copies of already-coded
background streams so they can execute in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor
from math import ceil

import numpy as np

from . import bitsback, lossy
from .container import (
    MODE_LOSSY_LOSSLESS,
    MODE_LOSSY_LOSSY,
    MODE_SINGLE_LOSSLESS,
    MODE_SINGLE_LOSSY,
    Container,
    parse_container,
    serialize_container,
)
from .errors import ConfigError, CorruptionError
from .rans import AnsState

DEFAULT_PRNG_SEED = 0x0B1ADE5EED
_SEED_MARGIN_BITS = 4096


@dataclass
class RoiLayout:
    patch_size: int
    rows: int
    cols: int
    labels: np.ndarray  # (rows, cols) uint8, 1 = blade
    image_height: int
    image_width: int

    @property
    def pad(self) -> tuple[int, int]:
        return (self.cols * self.patch_size - self.image_width,
                self.rows * self.patch_size - self.image_height)

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def blade_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.labels.reshape(-1)) if v]

    def background_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.labels.reshape(-1)) if not v]

    def corners(self) -> set[tuple[int, int]]:
        """Diagnostic corner cells: label differs from both the cell below
        and the cell to the right, out-of-grid neighbors counting as
        background."""
        lab = self.labels.astype(np.int16)
        below = np.zeros_like(lab)
        below[:-1] = lab[1:]
        right = np.zeros_like(lab)
        right[:, :-1] = lab[:, 1:]
        hits = (lab != below) & (lab != right)
        return {(int(r), int(c)) for r, c in zip(*np.nonzero(hits))}


def mirror_pad(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Reflectively extend the trailing spatial dims up to the target size."""
    h, w = arr.shape[-2:]
    out = arr
    while out.shape[-2] < target_h or out.shape[-1] < target_w:
        ph = min(target_h - out.shape[-2], out.shape[-2])
        pw = min(target_w - out.shape[-1], out.shape[-1])
        pad = [(0, 0)] * (out.ndim - 2) + [(0, ph), (0, pw)]
        out = np.pad(out, pad, mode="symmetric")
    return out


def build_layout(mask: np.ndarray, image_dims: tuple[int, int], patch_size: int) -> RoiLayout:
    """Patch grid and blade/background labels for an image and its mask."""
    h, w = image_dims
    if patch_size <= 0:
        raise ConfigError("patch size must be positive")
    rows = ceil(h / patch_size)
    cols = ceil(w / patch_size)
    labels = np.zeros((rows, cols), dtype=np.uint8)
    if mask is not None:
        m = np.asarray(mask)
        if m.shape != (h, w):
            raise ConfigError(f"mask shape {m.shape} does not match image {image_dims}")
        for r in range(rows):
            for c in range(cols):
                win = m[r * patch_size:(r + 1) * patch_size, c * patch_size:(c + 1) * patch_size]
                labels[r, c] = 1 if win.any() else 0
    return RoiLayout(patch_size, rows, cols, labels, h, w)


# ---------------------------------------------------------------------------
# run-length mask coding


def _write_varint(out: bytearray, v: int) -> None:
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    v = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise CorruptionError("truncated varint in coded mask")
        b = buf[pos]
        pos += 1
        v |= (b & 0x7F) << shift
        if not b & 0x80:
            return v, pos
        shift += 7
        if shift > 63:
            raise CorruptionError("oversized varint in coded mask")


def encode_mask(layout: RoiLayout) -> bytes:
    """Row-major run lengths of the label grid, background run first."""
    flat = layout.labels.reshape(-1)
    out = bytearray()
    runs = []
    if flat.size:
        change = np.nonzero(np.diff(flat))[0]
        bounds = np.concatenate(([0], change + 1, [flat.size]))
        runs = list(np.diff(bounds))
        if flat[0] == 1:
            runs.insert(0, 0)
    for r in runs:
        _write_varint(out, int(r))
    return bytes(out)


def decode_mask(data: bytes, rows: int, cols: int) -> np.ndarray:
    total = rows * cols
    flat = np.zeros(total, dtype=np.uint8)
    pos = 0
    fill = 0
    value = 0
    while fill < total:
        run, pos = _read_varint(data, pos)
        if fill + run > total:
            raise CorruptionError("mask runs exceed the patch grid")
        flat[fill:fill + run] = value
        fill += run
        value ^= 1
    if pos != len(data):
        raise CorruptionError("trailing bytes after coded mask")
    return flat.reshape(rows, cols)


# ---------------------------------------------------------------------------
# parallel planning


@dataclass
class RunPlan:
    blade_patches: list[int]           # container patch indices, chain order
    seed_backgrounds: list[int] | None  # background list positions; None = PRNG


@dataclass
class ParallelPlan:
    patches_per_run: int
    runs: list[RunPlan]


def plan_parallel(layout: RoiLayout, background_stream_sizes, required_init_bits: float) -> ParallelPlan:
    """Assign seed backgrounds to lossless runs.

    ``patches_per_run`` is the smallest whole number of background patches
    certain to cover the required initial bits (computed against the
    smallest background stream, so every run is sufficient).  Surplus
    blade patches are chained round-robin onto the existing runs.
    """
    blade = layout.blade_indices()
    if not blade:
        return ParallelPlan(0, [])
    sizes = list(background_stream_sizes)
    if not sizes or sum(sizes) < required_init_bits:
        # No (or not enough) background bits to seed from: one sequential
        # run on generated bits.
        return ParallelPlan(0, [RunPlan(blade, None)])
    smallest = min(sizes)
    if smallest <= 0:
        raise ConfigError("background stream with no bits cannot seed a run")
    ppr = max(1, ceil(required_init_bits / smallest))
    max_runs = len(sizes) // ppr
    if max_runs == 0:
        # Too little background to split: one run seeded with all of it.
        return ParallelPlan(len(sizes), [RunPlan(blade, list(range(len(sizes))))])
    n_runs = min(max_runs, len(blade))
    runs = []
    for r in range(n_runs):
        runs.append(RunPlan(blade[r::n_runs], list(range(r * ppr, (r + 1) * ppr))))
    return ParallelPlan(ppr, runs)


# ---------------------------------------------------------------------------
# region coding


def _sub_patches(patch: np.ndarray, model_ps: int):
    """Raster-order model-sized tiles of one layout patch."""
    ps = patch.shape[-1]
    if ps == model_ps:
        return [patch]
    if ps % model_ps:
        raise ConfigError("layout patch size must be a multiple of the model's")
    tiles = []
    for r in range(0, ps, model_ps):
        for c in range(0, ps, model_ps):
            tiles.append(patch[:, r:r + model_ps, c:c + model_ps])
    return tiles


def _encode_lossy_patch(model, patch) -> bytes:
    out = bytearray()
    for tile in _sub_patches(patch, model.patch_size):
        stream = lossy.lossy_encode(model, tile)
        out += len(stream.z2_bytes).to_bytes(4, "little") + stream.z2_bytes
        out += len(stream.z1_bytes).to_bytes(4, "little") + stream.z1_bytes
    return bytes(out)


def _decode_lossy_patch(model, blob: bytes, patch_size: int) -> np.ndarray:
    n_tiles = (patch_size // model.patch_size) ** 2
    out = np.zeros((3, patch_size, patch_size), dtype=np.uint8)
    pos = 0
    tiles = []
    for _ in range(n_tiles):
        parts = []
        for _ in range(2):
            if pos + 4 > len(blob):
                raise CorruptionError("lossy patch record truncated")
            n = int.from_bytes(blob[pos:pos + 4], "little")
            pos += 4
            if pos + n > len(blob):
                raise CorruptionError("lossy patch record truncated")
            parts.append(blob[pos:pos + n])
            pos += n
        tiles.append(lossy.lossy_decode(model, lossy.LossyStream(parts[0], parts[1])))
    if pos != len(blob):
        raise CorruptionError("trailing bytes in lossy patch record")
    i = 0
    for r in range(0, patch_size, model.patch_size):
        for c in range(0, patch_size, model.patch_size):
            out[:, r:r + model.patch_size, c:c + model.patch_size] = tiles[i]
            i += 1
    return out


def _encode_lossless_run(model, patch_list, seed_bytes: bytes):
    """Chain-encode patches on a seed state; returns (stream, consumed_bytes)."""
    state = AnsState.from_seed_bytes(seed_bytes)
    seed_tail = len(state.tail)
    low = seed_tail
    for patch in patch_list:
        for tile in _sub_patches(patch, model.patch_size):
            bitsback.bitswap_encode(model, tile, state)
            low = min(low, state.min_tail_len)
    return state.serialize(), seed_tail - low


def _encode_prng_run(model, patch_list, prng_seed: int, start_bytes: int):
    """Lossless run on generated seed bits, grown until they suffice,
    then re-run at the exact consumed size so no filler is stored."""
    rng_bytes = lambda n: np.random.default_rng(prng_seed).bytes(n)
    n = max(start_bytes, 64)
    for _ in range(24):
        try:
            stream, consumed = _encode_lossless_run(model, patch_list, rng_bytes(n))
        except bitsback.InitialBitsExhausted:
            n *= 2
            continue
        exact = 8 + consumed
        if exact < n:
            stream, _ = _encode_lossless_run(model, patch_list, rng_bytes(exact))
        return stream
    raise ConfigError("seed growth did not converge")


def estimate_required_init_bits(model, patches) -> float:
    """Upper-ish estimate of the first decode's cost on any given patch."""
    worst = 0.0
    for patch in patches:
        for tile in _sub_patches(patch, model.patch_size):
            tm = model.posterior_tables(1, model.normalize(np.asarray(tile, dtype=np.float32)))
            p = tm.freqs / float(1 << tm.precision_bits)
            entropy = float(-(p * np.log2(p)).sum())
            worst = max(worst, entropy)
    return worst + 64.0 * model.depth + _SEED_MARGIN_BITS


def extract_patches(image: np.ndarray, layout: RoiLayout) -> list[np.ndarray]:
    ps = layout.patch_size
    padded = mirror_pad(image, layout.rows * ps, layout.cols * ps)
    out = []
    for r in range(layout.rows):
        for c in range(layout.cols):
            out.append(padded[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps])
    return out


def assemble_patches(patches: dict[int, np.ndarray], layout: RoiLayout) -> np.ndarray:
    ps = layout.patch_size
    canvas = np.zeros((3, layout.rows * ps, layout.cols * ps), dtype=np.uint8)
    for idx, patch in patches.items():
        r, c = divmod(idx, layout.cols)
        canvas[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps] = patch
    return canvas[:, :layout.image_height, :layout.image_width]


def _run_seed_bytes(bg_streams: list[bytes], run: RunPlan, prng_seed: int) -> bytes | None:
    if run.seed_backgrounds is None:
        return None
    return b"".join(bg_streams[i] for i in run.seed_backgrounds)


def compress_regions(image, layout: RoiLayout, mode: int, blade_model, bg_model,
                     parallelism: int = 1, prng_seed: int = DEFAULT_PRNG_SEED,
                     required_init_bits: float | None = None):
    """Code all regions; returns (streams, patches_per_run).

    Streams are ordered: background patches in raster order, then blade
    patches (mode 0/2) or one stream per lossless run (mode 1/3).  The
    result is byte-identical for any parallelism.
    """
    patches = extract_patches(np.asarray(image, dtype=np.uint8), layout)
    bg_idx = layout.background_indices()
    blade_idx = layout.blade_indices()
    pool = ThreadPoolExecutor(max_workers=max(1, parallelism))
    try:
        bg_streams = list(pool.map(lambda i: _encode_lossy_patch(bg_model, patches[i]), bg_idx))
        if mode in (0, 2):
            blade_streams = list(pool.map(
                lambda i: _encode_lossy_patch(blade_model, patches[i]), blade_idx))
            return bg_streams + blade_streams, 0
        blade_patches = [patches[i] for i in blade_idx]
        if required_init_bits is None:
            required_init_bits = estimate_required_init_bits(blade_model, blade_patches)
        plan = plan_parallel(layout, [8 * len(s) for s in bg_streams], required_init_bits)

        def encode_run(run: RunPlan) -> bytes:
            chain = [patches[i] for i in run.blade_patches]
            seed = _run_seed_bytes(bg_streams, run, prng_seed)
            if seed is None:
                return _encode_prng_run(blade_model, chain, prng_seed,
                                        int(required_init_bits // 8) + 16)
            stream, _ = _encode_lossless_run(blade_model, chain, seed)
            return stream
        run_streams = list(pool.map(encode_run, plan.runs))
        return bg_streams + run_streams, plan.patches_per_run
    finally:
        pool.shutdown()


def decompress_regions(streams: list[bytes], layout: RoiLayout, mode: int,
                       blade_model, bg_model, patches_per_run: int,
                       prng_seed: int) -> np.ndarray:
    """Inverse of :func:`compress_regions`; returns the cropped image."""
    bg_idx = layout.background_indices()
    blade_idx = layout.blade_indices()
    decoded: dict[int, np.ndarray] = {}
    if len(streams) < len(bg_idx):
        raise CorruptionError("missing background streams")
    for i, idx in enumerate(bg_idx):
        decoded[idx] = _decode_lossy_patch(bg_model, streams[i], layout.patch_size)
    rest = streams[len(bg_idx):]
    if mode in (0, 2):
        if len(rest) != len(blade_idx):
            raise CorruptionError("blade stream count mismatch")
        for s, idx in zip(rest, blade_idx):
            decoded[idx] = _decode_lossy_patch(blade_model, s, layout.patch_size)
        return assemble_patches(decoded, layout)

    n_runs = len(rest)
    if blade_idx and n_runs == 0:
        raise CorruptionError("missing lossless run streams")
    tiles_per_patch = (layout.patch_size // blade_model.patch_size) ** 2
    bg_streams = [streams[i] for i in range(len(bg_idx))]
    for r, blob in enumerate(rest):
        run_patches = blade_idx[r::n_runs]
        state = AnsState.deserialize(blob)
        tiles = bitsback.decode_chain(blade_model, state, len(run_patches) * tiles_per_patch)
        _verify_restored_seed(state, bg_streams, patches_per_run, r, n_runs, prng_seed)
        t = 0
        for idx in run_patches:
            patch = np.zeros((3, layout.patch_size, layout.patch_size), dtype=np.uint8)
            m = blade_model.patch_size
            for rr in range(0, layout.patch_size, m):
                for cc in range(0, layout.patch_size, m):
                    patch[:, rr:rr + m, cc:cc + m] = tiles[t]
                    t += 1
            decoded[idx] = patch
    return assemble_patches(decoded, layout)


def _verify_restored_seed(state: AnsState, bg_streams, patches_per_run, run_index,
                          n_runs, prng_seed) -> None:
    """The decoded run must hand back exactly the seed state it started from."""
    if bg_streams and patches_per_run:
        lo = run_index * patches_per_run
        seed = b"".join(bg_streams[lo:lo + patches_per_run])
        expected = AnsState.from_seed_bytes(seed)
    else:
        n = 8 + len(state.tail)
        expected = AnsState.from_seed_bytes(np.random.default_rng(prng_seed).bytes(n))
    if state != expected:
        raise CorruptionError("restored state does not match the run seed")


# ---------------------------------------------------------------------------
# whole-image entry points


def _layout_for(mode: int, mask, image_dims, patch_size: int) -> RoiLayout:
    if mode in (MODE_LOSSY_LOSSY, MODE_LOSSY_LOSSLESS):
        if mask is None:
            raise ConfigError("dual-region modes need a mask")
        return build_layout(mask, image_dims, patch_size)
    layout = build_layout(None, image_dims, patch_size)
    if mode == MODE_SINGLE_LOSSLESS:
        layout.labels[:] = 1
    return layout


def _dual_patch_size(blade_model, bg_model) -> int:
    ps = max(blade_model.patch_size, bg_model.patch_size)
    if ps % blade_model.patch_size or ps % bg_model.patch_size:
        raise ConfigError("model patch sizes must divide the region patch size")
    return ps


def roi_compress(image, mask, mode: int, blade_model, bg_model=None, *,
                 blade_id: int = 0, bg_id: int = 0, parallelism: int = 1,
                 prng_seed: int = DEFAULT_PRNG_SEED,
                 required_init_bits: float | None = None) -> bytes:
    """Compress a full image into a serialized container.

    In single-region modes ``blade_model`` codes the whole image and
    ``bg_model`` is ignored.  Output bytes do not depend on parallelism.
    """
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigError("image must be (3, H, W)")
    h, w = image.shape[1:]
    if mode in (MODE_SINGLE_LOSSY, MODE_SINGLE_LOSSLESS):
        bg_model = blade_model if bg_model is None else bg_model
        patch_size = blade_model.patch_size
    else:
        if bg_model is None:
            raise ConfigError("dual-region modes need a background model")
        patch_size = _dual_patch_size(blade_model, bg_model)
    layout = _layout_for(mode, mask, (h, w), patch_size)
    streams, ppr = compress_regions(image, layout, mode, blade_model, bg_model,
                                    parallelism=parallelism, prng_seed=prng_seed,
                                    required_init_bits=required_init_bits)
    mask_bytes = encode_mask(layout) if mode in (MODE_LOSSY_LOSSY, MODE_LOSSY_LOSSLESS) else b""
    return serialize_container(Container(
        mode, w, h, patch_size, blade_id, bg_id, prng_seed, ppr, mask_bytes, streams))


def roi_decompress(blob: bytes, model_lookup) -> np.ndarray:
    """Decode a serialized container; ``model_lookup(id)`` supplies models."""
    c = parse_container(blob)
    blade_model = model_lookup(c.blade_model_id)
    if c.mode in (MODE_SINGLE_LOSSY, MODE_SINGLE_LOSSLESS):
        bg_model = blade_model
    else:
        bg_model = model_lookup(c.bg_model_id)
    layout = build_layout(None, (c.height, c.width), c.patch_size)
    if c.mode in (MODE_LOSSY_LOSSY, MODE_LOSSY_LOSSLESS):
        layout.labels = decode_mask(c.mask, layout.rows, layout.cols)
    elif c.mode == MODE_SINGLE_LOSSLESS:
        layout.labels[:] = 1
    eff_mode = {MODE_SINGLE_LOSSY: 0, MODE_SINGLE_LOSSLESS: 1}.get(c.mode, c.mode)
    return decompress_regions(c.streams, layout, eff_mode, blade_model, bg_model,
                              c.patches_per_run, c.prng_seed)


def region_bit_stats(blob: bytes) -> dict:
    """Bits per pixel overall and per region, straight from the container."""
    c = parse_container(blob)
    layout = build_layout(None, (c.height, c.width), c.patch_size)
    if c.mode in (MODE_LOSSY_LOSSY, MODE_LOSSY_LOSSLESS):
        layout.labels = decode_mask(c.mask, layout.rows, layout.cols)
    elif c.mode == MODE_SINGLE_LOSSLESS:
        layout.labels[:] = 1
    n_bg = len(layout.background_indices())
    bg_bits = 8 * sum(len(s) for s in c.streams[:n_bg])
    blade_bits = 8 * sum(len(s) for s in c.streams[n_bg:])
    ps = c.patch_size
    n_pixels = c.width * c.height
    bg_pixels = n_bg * ps * ps
    blade_pixels = layout.n_patches * ps * ps - bg_pixels
    return {
        "total_bits": 8 * len(blob),
        "bpp": 8 * len(blob) / n_pixels,
        "background_bpp": bg_bits / bg_pixels if bg_pixels else 0.0,
        "blade_bpp": blade_bits / blade_pixels if blade_pixels else 0.0,
        "mask_bytes": len(c.mask),
        "overhead_bits": 8 * len(blob) - bg_bits - blade_bits,
    }
