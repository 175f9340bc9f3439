"""Two-pass sub-cube training, plus the training/evaluation/prediction loops.

The two-pass step is the memory mechanism of this project:

  pass 1: every sub-cube is forwarded with the tape suspended; the detached
    predictions are assembled into the full-volume prediction, which enters
    the tape as a single leaf; the loss (one fused node) is backpropagated,
    yielding the upstream gradient w.r.t. the full prediction. That gradient
    is exact because the loss saw the genuine full-volume values.

  pass 2: each sub-cube is forwarded again with tracking, its backward is
    seeded with the matching slice of the upstream gradient, and parameter
    gradients accumulate across cubes. The tape is cleared after every
    cube, so live autodiff memory is bounded by one cube's graph.

One optimizer step per volume, regardless of cube count. Because each
cube's prediction depends only on its own input, the accumulated gradients
equal the full-volume gradients up to float summation order.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import LossConfig, dice_ce_loss, dsc, iou, vol_error_pct
from .model import SegModel
from .optim import OptimState, adamw_step, clip_grad_norm, cv_split, early_stop, lr_at
from .partition import Partition, make_partition
from .preprocess import PreprocessConfig, augment
from .tensor import Tensor, assemble, backward, no_grad, stable_sigmoid, tape
from .volio import read_nifti, write_checkpoint
from .volume import LabelVolume, Volume

__all__ = [
    "TrainConfig",
    "StepAborted",
    "StepResult",
    "two_pass_step",
    "plain_step",
    "full_volume_gradients",
    "predict_volume",
    "Subject",
    "load_dataset",
    "train",
    "evaluate_subjects",
]


class StepAborted(RuntimeError):
    """Raised when a step produces a non-finite loss; the run must stop."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    warmup_epochs: int = 5
    schedule: str = "cosine"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    early_stop_patience: int = 20
    clip_max_norm: float = 1.0
    loss: LossConfig = field(default_factory=LossConfig)
    cube_extents: tuple[int, int, int] | None = None  # None: one cube spanning the crop
    seed: int = 0
    fold: int = 0
    k_folds: int = 5
    # ablation switches
    depth_embedding: bool = True
    multi_scale: bool = True

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be < epochs")
        if self.early_stop_patience < 1:
            raise ValueError("early stopping patience must be >= 1")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if self.schedule != "cosine":
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class StepResult:
    loss: float
    grad_norm: float
    peak_tape_bytes: int


def _cube_meta(meta, offset):
    if meta is None:
        return {"z_offset": offset[0]}
    out = dict(meta)
    out["z_offset"] = offset[0]
    return out


def two_pass_step(volume: np.ndarray, gt: np.ndarray, partition: Partition,
                  model: SegModel, optim: OptimState, cfg: TrainConfig,
                  meta=None) -> StepResult:
    """Detached global loss, then gradient-correct per-cube backpropagation,
    one clipped optimizer step. Gradients and tape are cleared afterwards."""
    t = tape()
    t.clear()
    t.meter.reset_peak()
    x5 = np.asarray(volume, dtype=model.dtype)[None, None]
    g5 = np.asarray(gt)[None, None]
    if x5.shape[2:] != partition.volume_extents:
        raise ValueError(f"volume extents {x5.shape[2:]} do not match partition {partition.volume_extents}")
    cube = partition.cube_extents

    # pass 1: suspended forwards, assembled detached prediction, global loss
    with no_grad():
        blocks = []
        for off in partition.offsets:
            z, y, x = off
            xi = x5[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]]
            blocks.append(model.forward_subcube(xi, meta=_cube_meta(meta, off), mode="suspended"))
        assembled = assemble(blocks, partition)
    del blocks
    y_full = Tensor(assembled.data, requires_grad=True)
    loss_t = dice_ce_loss(y_full, g5.astype(model.dtype), cfg.loss)
    loss = float(loss_t.data)
    if not np.isfinite(loss):
        t.clear()
        raise StepAborted(f"non-finite loss {loss}")
    backward(loss_t, np.asarray(1.0, dtype=model.dtype))
    upstream = y_full.grad.copy()
    t.clear()

    # pass 2: tracked per-cube forwards seeded with the upstream gradient slice
    for off in partition.offsets:
        z, y, x = off
        xi = x5[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]]
        logits_i = model.forward_subcube(xi, meta=_cube_meta(meta, off), mode="tracked")
        seed = np.ascontiguousarray(upstream[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]])
        backward(logits_i, seed)
        t.clear()

    params = model.parameters()
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    norm, _ = clip_grad_norm(grads, cfg.clip_max_norm)
    adamw_step(params, optim)
    model.zero_grads()
    peak = t.meter.peak_bytes
    t.meter.reset_peak()
    return StepResult(loss, norm, peak)


def plain_step(volume: np.ndarray, gt: np.ndarray, model: SegModel,
               optim: OptimState, cfg: TrainConfig, meta=None) -> StepResult:
    """Ordinary full-volume step: tracked forward, loss on tape, backward,
    clip, update. The single-cube two-pass step must match this bit-for-bit."""
    t = tape()
    t.clear()
    t.meter.reset_peak()
    x5 = np.asarray(volume, dtype=model.dtype)[None, None]
    g5 = np.asarray(gt)[None, None]
    logits = model.forward_subcube(x5, meta=_cube_meta(meta, (0, 0, 0)), mode="tracked")
    loss_t = dice_ce_loss(logits, g5.astype(model.dtype), cfg.loss)
    loss = float(loss_t.data)
    if not np.isfinite(loss):
        t.clear()
        raise StepAborted(f"non-finite loss {loss}")
    backward(loss_t, np.asarray(1.0, dtype=model.dtype))
    t.clear()
    params = model.parameters()
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    norm, _ = clip_grad_norm(grads, cfg.clip_max_norm)
    adamw_step(params, optim)
    model.zero_grads()
    peak = t.meter.peak_bytes
    t.meter.reset_peak()
    return StepResult(loss, norm, peak)


def full_volume_gradients(volume: np.ndarray, gt: np.ndarray, partition: Partition,
                          model: SegModel, loss_cfg: LossConfig, meta=None) -> dict[str, np.ndarray]:
    """Reference gradients with every cube's graph on one tape: tracked
    forwards, tracked assembly, loss, one backward. Memory-hungry by
    design; the two-pass step must reproduce these gradients."""
    t = tape()
    t.clear()
    x5 = np.asarray(volume, dtype=model.dtype)[None, None]
    g5 = np.asarray(gt)[None, None]
    cube = partition.cube_extents
    blocks = []
    for off in partition.offsets:
        z, y, x = off
        xi = x5[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]]
        blocks.append(model.forward_subcube(xi, meta=_cube_meta(meta, off), mode="tracked"))
    assembled = assemble(blocks, partition)
    loss_t = dice_ce_loss(assembled, g5.astype(model.dtype), loss_cfg)
    backward(loss_t, np.asarray(1.0, dtype=model.dtype))
    out = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
           for name, p in model.parameters().items()}
    model.zero_grads()
    t.clear()
    return out


def predict_volume(model: SegModel, volume: np.ndarray, partition: Partition,
                   meta=None, threshold: float = 0.5):
    """Suspended per-cube forwards, assembled probabilities, thresholded mask."""
    x5 = np.asarray(volume, dtype=model.dtype)[None, None]
    cube = partition.cube_extents
    with no_grad():
        blocks = []
        for off in partition.offsets:
            z, y, x = off
            xi = x5[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]]
            blocks.append(model.forward_subcube(xi, meta=_cube_meta(meta, off), mode="suspended"))
        logits = assemble(blocks, partition)
    probs = stable_sigmoid(logits.data[0, 0]).astype(np.float32)
    return (probs > threshold).astype(np.uint8), probs


# ---------------------------------------------------------------------------
# dataset handling and the outer loops

@dataclass
class Subject:
    subject_id: str
    image: Volume
    label: LabelVolume


def load_dataset(directory) -> list[Subject]:
    """Load `<id>_img.nii[.gz]` / `<id>_lbl.nii[.gz]` pairs, sorted by id."""
    directory = Path(directory)
    subjects = []
    for img_path in sorted(directory.glob("*_img.nii*")):
        sid = img_path.name.split("_img.nii")[0]
        lbl_path = None
        for suffix in (".nii.gz", ".nii"):
            cand = directory / f"{sid}_lbl{suffix}"
            if cand.exists():
                lbl_path = cand
                break
        if lbl_path is None:
            raise FileNotFoundError(f"subject {sid!r}: no label file next to {img_path.name}")
        img = read_nifti(img_path, as_label=False)
        lbl = read_nifti(lbl_path, as_label=True)
        img.subject_id = sid
        lbl.subject_id = sid
        subjects.append(Subject(sid, img, lbl))
    if not subjects:
        raise FileNotFoundError(f"no subjects found under {directory}")
    return subjects


def _resolve_partition(extents, cfg: TrainConfig) -> Partition:
    cube = cfg.cube_extents if cfg.cube_extents is not None else tuple(extents)
    return make_partition(extents, cube)


def _validate(model, subjects, partition):
    scores = []
    for s in subjects:
        meta = {"subject_id": s.subject_id}
        mask, _ = predict_volume(model, s.image.voxels, partition, meta=meta)
        ve = vol_error_pct(mask, s.label.voxels)
        scores.append((dsc(mask, s.label.voxels), iou(mask, s.label.voxels), ve))
    mean_dsc = float(np.mean([s[0] for s in scores]))
    mean_iou = float(np.mean([s[1] for s in scores]))
    ves = [s[2] for s in scores if s[2] is not None]
    mean_ve = float(np.mean(ves)) if ves else None
    return mean_dsc, mean_iou, mean_ve


def train(model: SegModel, subjects: list[Subject], cfg: TrainConfig,
          pre_cfg: PreprocessConfig, out_dir, log_fn=None, max_steps=None):
    """Cross-validated training with per-epoch validation, best-checkpoint
    retention, early stopping, and line-delimited JSON logs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not subjects:
        raise ValueError("empty dataset")
    train_idx, val_idx = cv_split(len(subjects), cfg.fold, cfg.k_folds, cfg.seed)
    train_set = [subjects[i] for i in train_idx]
    val_set = [subjects[i] for i in val_idx]
    extents = train_set[0].image.voxels.shape
    for s in subjects:
        if s.image.voxels.shape != extents:
            raise ValueError(f"subject {s.subject_id}: extents {s.image.voxels.shape} differ from {extents}")
    partition = _resolve_partition(extents, cfg)

    optim = OptimState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    best = {"dsc": -1.0, "epoch": -1}
    log_path = out_dir / "train_log.jsonl"
    steps_done = 0

    with open(log_path, "w") as log:
        for epoch in range(cfg.epochs):
            optim.lr = lr_at(epoch, cfg.lr, cfg.epochs, cfg.warmup_epochs)
            order = rng.permutation(len(train_set))
            losses, norms = [], []
            t0 = time.time()
            for i in order:
                s = train_set[i]
                img, lbl, _ = augment(s.image, s.label, pre_cfg, rng)
                res = two_pass_step(img.voxels, lbl.voxels, partition, model, optim, cfg,
                                    meta={"subject_id": s.subject_id})
                losses.append(res.loss)
                norms.append(res.grad_norm)
                steps_done += 1
                if max_steps is not None and steps_done >= max_steps:
                    break
            val_dsc, val_iou, val_ve = _validate(model, val_set, partition)
            history.append(val_dsc)
            line = {
                "epoch": epoch,
                "lr": optim.lr,
                "train_loss": float(np.mean(losses)) if losses else None,
                "grad_norm": float(np.mean(norms)) if norms else None,
                "val_dsc": val_dsc,
                "val_iou": val_iou,
                "val_vol_error_pct": val_ve,
                "seconds": round(time.time() - t0, 3),
            }
            log.write(json.dumps(line) + "\n")
            log.flush()
            if log_fn:
                log_fn(line)
            if val_dsc > best["dsc"]:
                best = {"dsc": val_dsc, "epoch": epoch}
                write_checkpoint(model.state_dict(), out_dir / "best.vxt")
            if early_stop(history, cfg.early_stop_patience):
                break
            if max_steps is not None and steps_done >= max_steps:
                break
    return {"best_val_dsc": best["dsc"], "best_epoch": best["epoch"], "epochs_run": len(history),
            "checkpoint": str(out_dir / "best.vxt"), "log": str(log_path)}


def evaluate_subjects(model: SegModel, subjects: list[Subject], cfg: TrainConfig):
    """Per-subject metrics with the training partition, suspended mode."""
    if not subjects:
        raise ValueError("empty dataset")
    extents = subjects[0].image.voxels.shape
    partition = _resolve_partition(extents, cfg)
    rows = []
    for s in subjects:
        mask, probs = predict_volume(model, s.image.voxels, partition, meta={"subject_id": s.subject_id})
        rows.append(
            {
                "subject_id": s.subject_id,
                "dsc": dsc(mask, s.label.voxels),
                "iou": iou(mask, s.label.voxels),
                "vol_error_pct": vol_error_pct(mask, s.label.voxels),
                "mask": mask,
                "probs": probs,
            }
        )
    return rows
