"""Command-line entry point for feature extraction."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backbones import BackboneUnavailableError
from .extract import ExtractionError, ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segprop-extract",
        description="Extract per-window patch features and class embeddings "
        "in the segprop tensor format.",
    )
    parser.add_argument("--dataset-root", required=True, type=Path)
    parser.add_argument("--split", default="images")
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument(
        "--classes", required=True, type=Path, help="JSON file with the class-name list"
    )
    parser.add_argument("--vlm", default="synthetic", help="e.g. synthetic, maskclip")
    parser.add_argument("--vm", default="synthetic", help="e.g. synthetic, dino")
    parser.add_argument("--win", type=int, default=224)
    parser.add_argument("--stride", type=int, default=112)
    parser.add_argument("--short-side", type=int, default=448)
    parser.add_argument("--patch", type=int, default=16)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        names = json.loads(Path(args.classes).read_text())
        if not isinstance(names, list):
            raise ExtractionError("--classes file must hold a JSON list of names")
        job = ExtractionJob(
            dataset_root=args.dataset_root,
            split=args.split,
            out_dir=args.out,
            class_names=tuple(str(n) for n in names),
            vlm=args.vlm,
            vm=args.vm,
            win=(args.win, args.win),
            stride=(args.stride, args.stride),
            short_side=args.short_side,
            patch=args.patch,
        )
        manifest = extract(job)
    except (ExtractionError, BackboneUnavailableError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
