"""Command-line entry points: compress, decompress, segment-post, eval-curves.

Models are referenced through a plain-text manifest: one line per model,
``<id> <kind> <file> [notes...]``, paths relative to the manifest.  The
kind column (``lossy`` or ``lossless``) is checked against the weight
file on load.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio, roi, segpost, weights
from .container import (
    MODE_LOSSY_LOSSLESS,
    MODE_LOSSY_LOSSY,
    MODE_SINGLE_LOSSLESS,
    MODE_SINGLE_LOSSY,
)
from .errors import CodecError
from .hierarchy import HierarchicalModel


def load_manifest(path) -> dict[int, Path]:
    base = Path(path).parent
    entries: dict[int, Path] = {}
    kinds: dict[int, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"manifest line needs 'id kind file': {line!r}")
        mid = int(parts[0])
        entries[mid] = base / parts[2]
        kinds[mid] = parts[1]
    load_manifest.kinds = kinds  # inspected by _model_loader
    return entries


def _model_loader(manifest_path):
    entries = load_manifest(manifest_path)
    kinds = load_manifest.kinds
    cache = {}

    def lookup(mid: int):
        if mid not in entries:
            raise ValueError(f"model id {mid} not in manifest")
        if mid not in cache:
            model = weights.load_model(entries[mid])
            want = kinds.get(mid)
            is_lossless = isinstance(model, HierarchicalModel)
            if want == "lossy" and is_lossless or want == "lossless" and not is_lossless:
                raise ValueError(f"model id {mid} is not of kind {want!r}")
            cache[mid] = model
        return cache[mid]
    return lookup


def cmd_compress(args) -> int:
    image = fileio.read_ppm(args.input)
    mask = fileio.read_binary_mask(args.mask) if args.mask else None
    lookup = _model_loader(args.models)
    blade_model = lookup(args.blade_model)
    want_lossless = args.blade_mode == "lossless"
    if want_lossless != isinstance(blade_model, HierarchicalModel):
        raise ValueError(f"model id {args.blade_model} cannot code in {args.blade_mode} mode")
    if mask is None:
        mode = MODE_SINGLE_LOSSLESS if args.blade_mode == "lossless" else MODE_SINGLE_LOSSY
        bg_model, bg_id = None, args.blade_model
    else:
        mode = MODE_LOSSY_LOSSLESS if args.blade_mode == "lossless" else MODE_LOSSY_LOSSY
        if args.bg_model is None:
            raise ValueError("--bg-model is required when a mask is given")
        bg_model, bg_id = lookup(args.bg_model), args.bg_model
    t0 = time.perf_counter()
    blob = roi.roi_compress(image, mask, mode, blade_model, bg_model,
                            blade_id=args.blade_model, bg_id=bg_id,
                            parallelism=args.parallel, prng_seed=args.seed)
    dt = time.perf_counter() - t0
    Path(args.output).write_bytes(blob)
    stats = roi.region_bit_stats(blob)
    print(f"mode={mode} bpp={stats['bpp']:.4f} "
          f"blade_bpp={stats['blade_bpp']:.4f} background_bpp={stats['background_bpp']:.4f} "
          f"mask_bytes={stats['mask_bytes']} wall_s={dt:.3f}")
    return 0


def cmd_decompress(args) -> int:
    blob = Path(args.input).read_bytes()
    lookup = _model_loader(args.models)
    t0 = time.perf_counter()
    image = roi.roi_decompress(blob, lookup)
    dt = time.perf_counter() - t0
    fileio.write_ppm(args.output, image)
    print(f"decoded {image.shape[2]}x{image.shape[1]} wall_s={dt:.3f}")
    return 0


def cmd_segment_post(args) -> int:
    probs = fileio.read_probability_mask(args.probs)
    image = fileio.read_ppm(args.image)

    def first_pass(img, p):
        mask = (p > args.tau_bu).astype(np.uint8)
        return segpost.fill_holes(mask, segpost.estimate_orientation(img))

    bu_mask = (probs > args.tau_bu).astype(np.uint8)
    h1 = first_pass(image, probs)
    print(f"fill1_changed={int((h1 != bu_mask).sum())}")

    peer_images = [image]
    peer_masks = [h1]
    peer_dir = Path(args.peer_dir) if args.peer_dir else None
    if peer_dir and peer_dir.is_dir():
        for ppm in sorted(peer_dir.glob("*.ppm")):
            pgm = ppm.with_suffix(".pgm")
            if not pgm.exists():
                continue
            peer_img = fileio.read_ppm(ppm)
            peer_probs = fileio.read_probability_mask(pgm)
            peer_images.append(peer_img)
            peer_masks.append(first_pass(peer_img, peer_probs))
    forest = segpost.forest_fit(peer_images, peer_masks,
                                neigh_spec=(args.neighbors, args.distance), seed=args.seed)
    rf_mask = segpost.ensemble_predict(forest, image, probs, tau_rf=args.tau_rf)
    print(f"ensemble_changed={int((rf_mask != h1).sum())}")
    h2 = segpost.fill_holes(rf_mask, segpost.estimate_orientation(image))
    print(f"fill2_changed={int((h2 != rf_mask).sum())}")
    fileio.write_binary_mask(args.output, h2)
    return 0


def cmd_eval_curves(args) -> int:
    sims = fileio.read_similarities(args.input)
    curve = segpost.acceptance_curve(sims, args.grid)
    auc = segpost.curve_auc(curve)
    fileio.write_curve(args.output, curve.taus, curve.ratios, auc)
    print(f"auc={auc:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bladecodec",
                                description="dual-mode ROI image codec toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="compress a PPM image into a container")
    c.add_argument("--input", required=True)
    c.add_argument("--mask", help="binary PGM blade mask; omit for single-region coding")
    c.add_argument("--blade-mode", choices=("lossy", "lossless"), default="lossless")
    c.add_argument("--models", required=True, help="model manifest file")
    c.add_argument("--blade-model", type=int, required=True)
    c.add_argument("--bg-model", type=int)
    c.add_argument("--parallel", type=int, default=1)
    c.add_argument("--seed", type=lambda v: int(v, 0), default=roi.DEFAULT_PRNG_SEED)
    c.add_argument("--output", required=True)
    c.set_defaults(fn=cmd_compress)

    d = sub.add_parser("decompress", help="decode a container back to PPM")
    d.add_argument("--input", required=True)
    d.add_argument("--models", required=True)
    d.add_argument("--output", required=True)
    d.set_defaults(fn=cmd_decompress)

    s = sub.add_parser("segment-post", help="post-process a segmentation probability map")
    s.add_argument("--probs", required=True, help="16-bit PGM probability map")
    s.add_argument("--image", required=True, help="PPM image the map belongs to")
    s.add_argument("--peer-dir", help="directory of same-surface ppm/pgm pairs")
    s.add_argument("--output", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--neighbors", type=int, default=1)
    s.add_argument("--distance", type=int, default=1)
    s.add_argument("--tau-bu", type=float, default=segpost.TAU_BU)
    s.add_argument("--tau-rf", type=float, default=segpost.TAU_RF)
    s.set_defaults(fn=cmd_segment_post)

    e = sub.add_parser("eval-curves", help="acceptance-ratio curve from a similarity CSV")
    e.add_argument("--input", required=True)
    e.add_argument("--grid", type=int, default=1000)
    e.add_argument("--output", required=True)
    e.set_defaults(fn=cmd_eval_curves)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CodecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
