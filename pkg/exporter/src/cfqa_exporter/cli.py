"""cfqa-export: convert framework dumps into the toolkit's file formats."""

from __future__ import annotations

import argparse
import sys

from .convert import ExportError, ExportJob, export_feature, export_predictions


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfqa-export")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-feature", help="tensor dump -> CFT + manifest entry")
    p.add_argument("input", help="saved tensor (.npy, .npz, .pt)")
    p.add_argument("--task", required=True, choices=["Cls", "Seg", "Dpt"])
    p.add_argument("--split-point", default="", dest="split_point")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--id", dest="feature_id", default="", help="feature id (default: file stem)")
    p.add_argument("--source", default="", help="source sample name")
    p.add_argument("--key", help="array name inside .npz / .pt dict dumps")

    p = sub.add_parser("export-predictions", help="prediction dump -> CSV/PGM/CFT")
    p.add_argument("input")
    p.add_argument("--kind", required=True, choices=["logits", "mask", "depth"])
    p.add_argument("--out", required=True, help="output file path")
    p.add_argument("--gt", type=int, help="ground-truth class index (logits)")
    p.add_argument("--valid-mask", dest="valid_mask", help="validity mask dump (depth)")
    p.add_argument("--mask-out", dest="mask_out", help="validity mask PGM path (depth)")
    p.add_argument("--key", help="array name inside .npz / .pt dict dumps")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-feature":
            entry = export_feature(
                ExportJob(
                    input_path=args.input,
                    task=args.task,
                    split_point=args.split_point,
                    out_dir=args.out,
                    feature_id=args.feature_id,
                    source_sample=args.source,
                    key=args.key,
                )
            )
            sys.stdout.write(f"{entry['feature_id']} -> {entry['file_path']}\n")
        else:
            export_predictions(
                kind=args.kind,
                input_path=args.input,
                out_path=args.out,
                gt=args.gt,
                valid_mask_path=args.valid_mask,
                mask_out_path=args.mask_out,
                key=args.key,
            )
            sys.stdout.write(f"{args.input} -> {args.out}\n")
        return 0
    except (ExportError, ValueError, OSError) as exc:
        sys.stderr.write(f"cfqa-export: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
