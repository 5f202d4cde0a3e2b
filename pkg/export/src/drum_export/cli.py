"""``drum-export`` command-line entry point."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import ENCODERS
from .export import ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drum-export",
        description="Encode a prompt list into an embedding corpus directory.")
    parser.add_argument("--encoder", required=True, choices=sorted(ENCODERS),
                        help="text encoder to run")
    parser.add_argument("--prompts", required=True,
                        help="text file, one prompt per line, optional "
                             "tab-separated preference")
    parser.add_argument("--out", required=True, help="output corpus directory")
    parser.add_argument("--max-tokens", type=int, default=None,
                        help="token budget below the encoder default")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--offline-seed", type=int, default=0,
                        help="init seed used when pretrained weights are "
                             "unreachable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(encoder=args.encoder, prompts=Path(args.prompts),
                      out=Path(args.out), max_tokens=args.max_tokens,
                      device=args.device, offline_seed=args.offline_seed)
    try:
        out = export(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote corpus to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
