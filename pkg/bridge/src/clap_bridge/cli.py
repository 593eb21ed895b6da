"""Command line entry point.

Default mode serves the stdio protocol; --selftest checks the install and
exits; --init writes a fresh deterministic checkpoint for --arch.
"""

from __future__ import annotations

import argparse
import sys

from .model import ARCHS, init_checkpoint
from .server import BridgeConfig, selftest, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clap-bridge",
        description="serve a CLAP-style audio embedder over the stdio bridge protocol",
    )
    parser.add_argument("--checkpoint", required=True, help="path to the model checkpoint")
    parser.add_argument("--layer", type=int, default=1, choices=(0, 1, 2),
                        help="0: 128-dim output, 1/2: 512-dim feature layers")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--selftest", action="store_true",
                        help="verify the checkpoint loads and embeds deterministically")
    parser.add_argument("--init", action="store_true",
                        help="create a deterministic fresh checkpoint at --checkpoint")
    parser.add_argument("--arch", default="CM", choices=ARCHS,
                        help="architecture tag used with --init")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.init:
        path = init_checkpoint(args.checkpoint, arch=args.arch)
        print(f"wrote {args.arch} checkpoint to {path}")
        return 0
    config = BridgeConfig(checkpoint=args.checkpoint, layer=args.layer, device=args.device)
    if args.selftest:
        return selftest(config)
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())
