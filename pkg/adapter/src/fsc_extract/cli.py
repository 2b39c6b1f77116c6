"""Command line entry point: fsc-extract."""

from __future__ import annotations

import argparse
import logging
import sys

from .backends import DetectorError
from .extract import (DEFAULT_LABEL_PATTERN, ExtractionError, ExtractionJob,
                      extract)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsc-extract",
        description="Extract facial landmarks and skeleton joints from a "
                    "directory of images into an fsc-manifest dataset.")
    parser.add_argument("--image-dir", required=True)
    parser.add_argument("--out", required=True, help="output manifest.jsonl path")
    parser.add_argument("--labels", default=DEFAULT_LABEL_PATTERN,
                        help="filename regex with one age capture group, or a "
                             "CSV file with filename,age columns")
    parser.add_argument("--face-backend", default="marker")
    parser.add_argument("--skeleton-backend", default="marker")
    parser.add_argument("--patch-size", type=int, default=32)
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    job = ExtractionJob(image_dir=args.image_dir, out_manifest=args.out,
                        label_source=args.labels,
                        face_backend=args.face_backend,
                        skeleton_backend=args.skeleton_backend,
                        patch_size=args.patch_size)
    try:
        records = extract(job)
    except (ExtractionError, DetectorError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {len(records)} records to {job.out_manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
