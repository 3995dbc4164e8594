"""Command line front end: ``encoder_export export --input ... --out ...``.

Exit codes follow the engine's convention: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import sys

from .backbones import BACKBONES, BackboneError
from .export import ExportConfig, ExportError, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="encoder_export",
        description="Run a frozen image backbone over frames and write the "
                    "engine's binary feature-stream format.")
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("export", help="encode frames into a feature stream")
    ex.add_argument("--input", required=True,
                    help="image directory, .npy stack, or video file")
    ex.add_argument("--out", required=True, help="output stream path")
    ex.add_argument("--backbone", default="inception_v3",
                    choices=sorted(BACKBONES))
    ex.add_argument("--stride", type=int, default=1,
                    help="keep every k-th frame (default 1)")
    ex.add_argument("--fps", default=None,
                    help="frame rate, e.g. 4 or 30000/1001 "
                         "(default: source metadata, else 1)")
    ex.add_argument("--weights", default="auto",
                    choices=["auto", "pretrained", "none"],
                    help="inception_v3 only: pretrained weights, or a seeded "
                         "random init for offline use (default auto)")
    ex.add_argument("--skip-unreadable", action="store_true",
                    help="log and drop undecodable frames instead of aborting")
    ex.add_argument("--batch", type=int, default=8, help="encode batch size")
    return parser


def cmd_export(args) -> int:
    options = {}
    if args.backbone == "inception_v3":
        options["weights"] = args.weights
    config = ExportConfig(
        input_path=args.input, out_path=args.out, backbone=args.backbone,
        stride=args.stride, fps=args.fps,
        skip_unreadable=args.skip_unreadable, batch_size=args.batch,
        backbone_options=options)
    result = export_features(config)
    print(f"wrote {result.frames_written} frames "
          f"({result.grid_side}x{result.grid_side} grid, "
          f"{result.feature_dim} features) to {result.out_path}")
    print(f"sidecar: {result.sidecar_path}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} unreadable frame(s)",
              file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return cmd_export(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ExportError, BackboneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
