"""Command line: export a checkpoint, optionally verifying the result."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportSpec, export, load_source
from .verify import verify_export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlexport")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--source", required=True,
                       help="checkpoint file or open_clip 'name:pretrained' id")
        p.add_argument("--vision-heads", type=int, default=14)
        p.add_argument("--text-heads", type=int, default=10)
        p.add_argument("--quick-gelu", action="store_true")
        p.add_argument("--merges", default=None,
                       help="gzipped BPE merge table to bundle")
        p.add_argument("--context-length", type=int, default=None)

    exp = sub.add_parser("export", help="write an interchange directory")
    common(exp)
    exp.add_argument("--out", required=True)
    exp.add_argument("--verify", action="store_true",
                     help="compare the export against the source afterwards")
    exp.add_argument("--verify-images", type=int, default=8)

    ver = sub.add_parser("verify", help="re-check an existing export")
    common(ver)
    ver.add_argument("--dir", required=True)
    ver.add_argument("--verify-images", type=int, default=8)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        source=args.source,
        out_dir=getattr(args, "out", getattr(args, "dir", None)),
        vision_heads=args.vision_heads,
        text_heads=args.text_heads,
        quick_gelu=args.quick_gelu,
        merges_path=args.merges,
        context_length=args.context_length,
        verify_images=args.verify_images,
    )
    try:
        if args.command == "export":
            out_dir = export(spec)
            result = {"exported": out_dir}
            if args.verify:
                result["verification"] = verify_export(
                    load_source(spec), out_dir, count=spec.verify_images)
        else:
            result = {"verification": verify_export(
                load_source(spec), args.dir, count=spec.verify_images)}
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": {"type": type(exc).__name__,
                                    "message": str(exc)}}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(run())
