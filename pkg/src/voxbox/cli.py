"""Command-line entry point: preprocess, train, eval, predict, selftest.

Flags override config-file values. VOXBOX_SEED, when set, overrides the
seed from either source. Every run writes a manifest with the resolved
config snapshot so it can be reproduced.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernel_backend
from .config import RunConfig, build_model, load_run_config, run_config_to_dict
from .preprocess import median_inplane_spacing, preprocess_subject
from .trainer import StepAborted, evaluate_subjects, load_dataset, train
from .volio import EvalReport, SubjectMetrics, read_checkpoint, read_nifti, write_nifti, write_overlay, write_report
from .volume import LabelVolume

__all__ = ["main"]


def _write_manifest(out_dir: Path, command: str, args_ns, cfg: RunConfig | None, started: float):
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "argv": sys.argv[1:],
        "code_version": __version__,
        "kernel_backend": kernel_backend,
        "config_path": getattr(args_ns, "config", None),
        "config": run_config_to_dict(cfg) if cfg is not None else None,
        "seed": cfg.train.seed if cfg is not None else None,
        "started_unix": started,
        "finished_unix": time.time(),
        "out_dir": str(out_dir),
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def _resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    train_kw = {}
    if getattr(args, "cubes", None) is not None:
        crop = cfg.preprocess.crop_extent
        n = args.cubes
        split = round(n ** (1.0 / 3.0))
        if split**3 != n:
            raise SystemExit(f"--cubes must be a perfect cube (1, 8, 27, ...), got {n}")
        bad = [c for c in crop if c % split]
        if bad:
            raise SystemExit(f"crop extents {crop} not divisible by the per-axis split {split}")
        train_kw["cube_extents"] = tuple(c // split for c in crop)
    if getattr(args, "cube_extents", None):
        train_kw["cube_extents"] = tuple(int(v) for v in args.cube_extents.split(","))
    if getattr(args, "no_depth_embedding", False):
        train_kw["depth_embedding"] = False
    if getattr(args, "single_scale", False):
        train_kw["multi_scale"] = False
    for name in ("epochs", "fold", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            train_kw[name] = v
    env_seed = os.environ.get("VOXBOX_SEED")
    if env_seed is not None:
        train_kw["seed"] = int(env_seed)
    model = cfg.model
    if getattr(args, "backend", None) or getattr(args, "features", None):
        enc_kw = {}
        if args.backend:
            enc_kw["backend"] = args.backend
            if args.backend == "imported" and model.encoder.d_emb != 768:
                enc_kw.setdefault("d_emb", 768)
                enc_kw.setdefault("tap_layers", (3, 6, 9, 12))
        if args.features:
            enc_kw["feature_dir"] = args.features
        model = dataclasses.replace(model, encoder=dataclasses.replace(model.encoder, **enc_kw))
    return RunConfig(model, cfg.preprocess, dataclasses.replace(cfg.train, **train_kw))


def _cmd_preprocess(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    in_dir, out_dir = Path(args.data), Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = load_dataset(in_dir)
    spacing = cfg.preprocess.target_spacing
    if spacing is None:
        spacing = median_inplane_spacing([s.image for s in subjects])
        print(f"resolved target spacing: {spacing}")
    statuses = {}
    for s in subjects:
        img, lbl, status = preprocess_subject(s.image, s.label, cfg.preprocess, target_spacing=spacing)
        write_nifti(img, out_dir / f"{s.subject_id}_img.nii.gz")
        write_nifti(lbl, out_dir / f"{s.subject_id}_lbl.nii.gz")
        statuses[s.subject_id] = status
        if status["crop_status"] != "ok":
            print(f"warning: subject {s.subject_id}: {status['crop_status']}", file=sys.stderr)
    (out_dir / "preprocess_status.json").write_text(json.dumps(
        {"target_spacing": list(spacing), "subjects": statuses}, indent=2) + "\n")
    _write_manifest(out_dir, "preprocess", args, cfg, started)
    print(f"preprocessed {len(subjects)} subjects -> {out_dir}")
    return 0


def _config_tag(cfg: RunConfig) -> str:
    cube = cfg.train.cube_extents or cfg.preprocess.crop_extent
    arms = []
    if not cfg.train.depth_embedding:
        arms.append("no-depth-embedding")
    if not cfg.train.multi_scale:
        arms.append("single-scale")
    base = f"cube={'x'.join(str(c) for c in cube)}"
    return ";".join([base] + arms)


def _cmd_train(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = load_dataset(args.data)
    model = build_model(cfg)
    print(f"trainable parameters: {model.parameter_count():,} "
          f"(full-size reference configuration: 21,306,337)")
    try:
        result = train(model, subjects, cfg.train, cfg.preprocess, out_dir,
                       log_fn=lambda line: print(json.dumps(line)), max_steps=args.max_steps)
    except StepAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        _write_manifest(out_dir, "train", args, cfg, started)
        return 2
    # Table-style report on the validation fold with the best checkpoint
    from .optim import cv_split

    state = read_checkpoint(result["checkpoint"])
    model.load_state(state)
    _, val_idx = cv_split(len(subjects), cfg.train.fold, cfg.train.k_folds, cfg.train.seed)
    rows = evaluate_subjects(model, [subjects[i] for i in val_idx], cfg.train)
    report = EvalReport(
        [SubjectMetrics(r["subject_id"], r["dsc"], r["iou"], r["vol_error_pct"]) for r in rows],
        config_tag=_config_tag(cfg),
    )
    write_report(report, out_dir / "report.json")
    _write_manifest(out_dir, "train", args, cfg, started)
    print(json.dumps({"result": result, "val_mean": report.mean()}))
    return 0


def _load_model_from(args, cfg: RunConfig):
    model = build_model(cfg)
    model.load_state(read_checkpoint(args.checkpoint))
    return model


def _cmd_eval(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = load_dataset(args.data)
    model = _load_model_from(args, cfg)
    rows = evaluate_subjects(model, subjects, cfg.train)
    report = EvalReport(
        [SubjectMetrics(r["subject_id"], r["dsc"], r["iou"], r["vol_error_pct"]) for r in rows],
        config_tag=_config_tag(cfg),
    )
    write_report(report, out_dir / "report.json")
    overlay_dir = out_dir / "overlays"
    overlay_dir.mkdir(exist_ok=True)
    by_id = {s.subject_id: s for s in subjects}
    for r in rows:
        s = by_id[r["subject_id"]]
        gt = s.label.voxels
        center = [int(round(c)) for c in (np.argwhere(gt > 0).mean(axis=0) if gt.any()
                                          else (np.asarray(gt.shape) - 1) / 2)]
        for plane, idx in (("axial", center[0]), ("coronal", center[1]), ("sagittal", center[2])):
            write_overlay(s.image, r["mask"], gt, plane, idx,
                          overlay_dir / f"{s.subject_id}_{plane}.ppm")
    _write_manifest(out_dir, "eval", args, cfg, started)
    print(json.dumps({"mean": report.mean(), "report": str(out_dir / 'report.json')}))
    return 0


def _cmd_predict(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    model = _load_model_from(args, cfg)
    vol = read_nifti(args.image, as_label=False)
    from .partition import make_partition
    from .trainer import predict_volume

    cube = cfg.train.cube_extents or vol.voxels.shape
    part = make_partition(vol.voxels.shape, cube)
    mask, _ = predict_volume(model, vol.voxels, part, meta={"subject_id": vol.subject_id})
    out_path = Path(args.out)
    out = LabelVolume(mask, vol.spacing, vol.direction, vol.origin, vol.subject_id)
    if out_path.suffix not in (".nii", ".gz"):
        out_path.mkdir(parents=True, exist_ok=True)
        out_path = out_path / f"{vol.subject_id}_pred.nii.gz"
    write_nifti(out, out_path)
    _write_manifest(out_path.parent, "predict", args, cfg, started)
    print(f"wrote {out_path} (foreground voxels: {int(mask.sum())})")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return run_selftest()


def _add_common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="run config JSON")
    p.add_argument("--seed", type=int, default=None, help="override config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxbox", description=__doc__)
    parser.add_argument("--version", action="version", version=f"voxbox {__version__} ({kernel_backend} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="standardize a raw dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="directory of <id>_img/<id>_lbl NIfTI pairs")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on a preprocessed dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="preprocessed dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--cubes", type=int, default=None, help="sub-cube count (perfect cube: 1, 8, ...)")
    p.add_argument("--cube-extents", default=None, help="explicit d,h,w sub-cube extents")
    p.add_argument("--no-depth-embedding", action="store_true", help="ablation: skip the depth embedding")
    p.add_argument("--single-scale", action="store_true", help="ablation: decode only the deepest level")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--backend", choices=("toy", "imported"), default=None)
    p.add_argument("--features", default=None, help="VXF1 feature directory for the imported backend")
    p.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")

    p = sub.add_parser("eval", help="evaluate a checkpoint, write report and overlays")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cubes", type=int, default=None)
    p.add_argument("--cube-extents", default=None)
    p.add_argument("--no-depth-embedding", action="store_true")
    p.add_argument("--single-scale", action="store_true")
    p.add_argument("--backend", choices=("toy", "imported"), default=None)
    p.add_argument("--features", default=None)

    p = sub.add_parser("predict", help="segment one preprocessed volume")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("toy", "imported"), default=None)
    p.add_argument("--features", default=None)

    p = sub.add_parser("selftest", help="run the built-in property suites")
    return parser


_COMMANDS = {
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
