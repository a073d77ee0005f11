"""Exporter command line: run an export job or merge caption flags."""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .jobs import ExportJob, export_run, merge_caption_flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="winovis-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="generate images and export attention bundles")
    p.add_argument("--instances", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="stabilityai/stable-diffusion-2-base")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64, dest="image_size")
    p.add_argument("--emit-raw-stacks", action="store_true", dest="emit_raw_stacks")
    p.add_argument("--overlays", action="store_true")
    p.add_argument("--backend", choices=("diffusers", "stub"), default="diffusers")

    m = sub.add_parser("merge-caption-flags", help="apply a caption-flags CSV to bundles")
    m.add_argument("--bundles", required=True)
    m.add_argument("--labels", required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "merge-caption-flags":
        try:
            updated = merge_caption_flags(args.bundles, args.labels)
        except Exception as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"updated {updated} bundle(s)")
        return 0

    if args.backend == "stub":
        from .backends import StubBackend

        backend = StubBackend()
    else:
        from .backends import DiffusersBackend

        try:
            backend = DiffusersBackend(args.model)
        except Exception as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    job = ExportJob(
        instances_path=args.instances,
        model_id=args.model,
        out_dir=args.out,
        steps=args.steps,
        seed=args.seed,
        emit_raw_stacks=args.emit_raw_stacks,
        overlay_debug_images=args.overlays,
        image_size=args.image_size,
    )
    manifest = export_run(job, backend)
    failed = [e["id"] for e in manifest["instances"] if e["status"] != "ok"]
    for iid in failed:
        print(f"failed: {iid}", file=sys.stderr)
    print(f"exported {len(manifest['instances']) - len(failed)}"
          f"/{len(manifest['instances'])} instance(s)")
    return 2 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
