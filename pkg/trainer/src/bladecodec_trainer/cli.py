"""`bladecodec-train`: fit desk-scale models and export weight files."""

from __future__ import annotations

import argparse
import sys

from .bitswap import BitswapTrainConfig, train_bitswap
from .data import patches_from_dir
from .hyperprior import HyperpriorTrainConfig, train_hyperprior


def _common(sub):
    sub.add_argument("--out", required=True, help="output .rmlw path")
    sub.add_argument("--patch-dir", help="directory of PPM training images; synthetic if omitted")
    sub.add_argument("--patch-size", type=int, default=16)
    sub.add_argument("--steps", type=int, default=2000)
    sub.add_argument("--batch-size", type=int, default=8)
    sub.add_argument("--lr", type=float, default=1e-4)
    sub.add_argument("--seed", type=int, default=0)


def build_parser():
    p = argparse.ArgumentParser(prog="bladecodec-train")
    sub = p.add_subparsers(dest="command", required=True)

    h = sub.add_parser("hyperprior", help="train the two-level lossy model")
    _common(h)
    h.add_argument("--zeta", type=float, default=0.05)
    h.add_argument("--z1-channels", type=int, default=8)
    h.add_argument("--z2-channels", type=int, default=4)

    b = sub.add_parser("bitswap", help="train the hierarchical lossless model")
    _common(b)
    b.add_argument("--depth", type=int, default=2)
    b.add_argument("--z-channels", type=int, default=4)
    b.add_argument("--residual-blocks", type=int, default=2)
    b.add_argument("--free-bits", type=float, default=1.0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    patches = None
    if args.patch_dir:
        patches = patches_from_dir(args.patch_dir, args.patch_size, seed=args.seed)
    try:
        if args.command == "hyperprior":
            cfg = HyperpriorTrainConfig(
                patch_size=args.patch_size, zeta=args.zeta, z1_channels=args.z1_channels,
                z2_channels=args.z2_channels, learning_rate=args.lr,
                batch_size=args.batch_size, steps=args.steps, seed=args.seed)
            history, _ = train_hyperprior(cfg, args.out, patches)
        else:
            cfg = BitswapTrainConfig(
                depth=args.depth, patch_size=args.patch_size, z_channels=args.z_channels,
                residual_blocks=args.residual_blocks, free_bits=args.free_bits,
                learning_rate=args.lr, batch_size=args.batch_size, steps=args.steps,
                seed=args.seed)
            history, _ = train_bitswap(cfg, args.out, patches)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}: loss {history[0]:.4f} -> {history[-1]:.4f} "
          f"over {len(history)} steps")
    return 0


if __name__ == "__main__":
    sys.exit(main())
