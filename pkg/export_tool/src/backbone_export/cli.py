"""Command-line interface: export and verify frozen feature extractors.

Results go to stdout as JSON. Errors go to stderr as a JSON object with
"error" and "message" keys and exit code 2; a verification that ran but
failed exits 1 with the full report on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ExportError
from .exporter import (
    DEFAULT_OPSET,
    SUPPORTED_BACKBONES,
    ExportRequest,
    export_backbone,
    verify_export,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backbone-export",
        description="Export torchvision backbones as frozen ONNX feature extractors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_export = sub.add_parser("export", help="export one backbone to a directory")
    p_export.add_argument(
        "--backbone", required=True, help="one of: " + ", ".join(SUPPORTED_BACKBONES)
    )
    p_export.add_argument("--out", required=True, help="output directory")
    p_export.add_argument(
        "--weights",
        default="pretrained",
        help='"pretrained" (download), "random" (fixed-seed init, for plumbing '
        "tests), or a local state-dict path",
    )
    p_export.add_argument("--opset", type=int, default=DEFAULT_OPSET)

    p_verify = sub.add_parser("verify", help="verify an exported model + metadata pair")
    p_verify.add_argument("--model", required=True, help="path to the .onnx file")
    p_verify.add_argument("--metadata", required=True, help="path to the .json sidecar")
    p_verify.add_argument("--batch", type=int, default=4, help="synthetic batch size")

    return parser


def _cmd_export(args) -> int:
    req = ExportRequest(
        backbone=args.backbone, out_dir=args.out, weights=args.weights, opset=args.opset
    )
    result = export_backbone(req)
    json.dump(
        {
            "backbone": result.backbone,
            "model": str(result.model_path),
            "metadata": str(result.meta_path),
            "feature_dim": result.feature_dim,
            "sha256": result.sha256,
            "weights_version": result.weights_version,
            "verified": result.report.passed,
        },
        sys.stdout,
        indent=2,
    )
    print()
    return 0


def _cmd_verify(args) -> int:
    if args.batch < 1:
        raise ExportError(f"batch must be >= 1, got {args.batch}")
    report = verify_export(args.model, args.metadata, batch_size=args.batch)
    json.dump(report.as_dict(), sys.stdout, indent=2)
    print()
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            return _cmd_export(args)
        return _cmd_verify(args)
    except (ExportError, OSError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        print(file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
