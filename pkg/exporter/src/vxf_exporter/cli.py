"""Command line for the feature exporter; flags mirror the export job."""

from __future__ import annotations

import argparse
import sys

from . import ExportJob, discover_subjects, export_features


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="vxf-export", description=__doc__)
    ap.add_argument("--data", required=True, help="directory of preprocessed <id>_img.nii[.gz] volumes")
    ap.add_argument("--out", required=True, help="output directory for .vxf files")
    ap.add_argument("--subjects", default=None, help="comma-separated ids (default: all in --data)")
    ap.add_argument("--backbone", choices=("stub", "dinov3"), default="dinov3")
    ap.add_argument("--model-id", default="facebook/dinov3-vitb16-pretrain-lvd1689m")
    ap.add_argument("--taps", default="3,6,9,12", help="four comma-separated tap layers")
    ap.add_argument("--native-size", type=int, default=224)
    ap.add_argument("--patch-size", type=int, default=16)
    ap.add_argument("--stub-seed", type=int, default=0)
    args = ap.parse_args(argv)

    subjects = (args.subjects.split(",") if args.subjects else discover_subjects(args.data))
    if not subjects:
        print(f"error: no subjects found under {args.data}", file=sys.stderr)
        return 1
    job = ExportJob(
        subjects=subjects,
        data_dir=args.data,
        out_dir=args.out,
        backbone=args.backbone,
        model_id=args.model_id,
        tap_layers=tuple(int(t) for t in args.taps.split(",")),
        native_size=args.native_size,
        patch_size=args.patch_size,
        stub_seed=args.stub_seed,
    )
    try:
        written = export_features(job, log=print)
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(written)} subjects -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
