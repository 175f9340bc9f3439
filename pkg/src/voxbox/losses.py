"""DiceCE training objective and evaluation metrics.

The loss is registered as a single fused tape node with a hand-derived
backward. The node keeps only references and a few scalars and recomputes
the sigmoid in backward, so the pass-one loss tape stays tiny even for a
full-volume prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, record, stable_sigmoid

__all__ = ["LossConfig", "dice_ce_loss", "dsc", "iou", "vol_error_pct", "binarize"]


@dataclass(frozen=True)
class LossConfig:
    lambda_dice: float = 1.0
    lambda_ce: float = 1.0
    smooth: float = 1e-5

    def __post_init__(self):
        if self.lambda_dice < 0 or self.lambda_ce < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_dice == 0 and self.lambda_ce == 0:
            raise ValueError("at least one loss weight must be positive")


def dice_ce_loss(logits: Tensor, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """lambda_D * soft-Dice + lambda_CE * mean binary cross-entropy.

    Dice runs on the single foreground channel (no background term);
    cross-entropy is computed in the numerically safe logits form.
    """
    g = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    g = g.astype(logits.data.dtype)
    if g.shape != logits.data.shape:
        raise ValueError(f"dice_ce_loss: extents {logits.data.shape} vs ground truth {g.shape}")
    x = logits.data
    p = stable_sigmoid(x)
    n = x.size
    eps = cfg.smooth

    inter = float((p * g).sum())
    psum = float(p.sum())
    gsum = float(g.sum())
    dice = 1.0 - (2.0 * inter + eps) / (psum + gsum + eps)
    # bce in logits form: max(x,0) - x*g + log1p(exp(-|x|))
    bce = float((np.maximum(x, 0) - x * g + np.log1p(np.exp(-np.abs(x)))).sum()) / n
    loss = cfg.lambda_dice * dice + cfg.lambda_ce * bce
    out = np.asarray(loss, dtype=x.dtype).reshape(())

    def bwd(grad):
        s = float(np.asarray(grad))
        pp = stable_sigmoid(x)  # recomputed; the node retains no volume-sized buffer
        b = psum + gsum + eps
        a = 2.0 * inter + eps
        ddice_dp = -(2.0 * g * b - a) / (b * b)
        dx = cfg.lambda_dice * ddice_dp * pp * (1.0 - pp) + cfg.lambda_ce * (pp - g) / n
        return ((s * dx).astype(x.dtype),)

    return record(out, [logits], bwd, op="dice_ce")


def binarize(prob_or_logit: np.ndarray, from_logits: bool = False, threshold: float = 0.5) -> np.ndarray:
    p = stable_sigmoid(prob_or_logit) if from_logits else prob_or_logit
    return p > threshold


def _check_masks(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"metric: mask extents differ, {pred.shape} vs {gt.shape}")
    return pred, gt


def dsc(pred_mask, gt_mask) -> float:
    pred, gt = _check_masks(pred_mask, gt_mask)
    a, b = pred.sum(), gt.sum()
    if a + b == 0:
        return 1.0
    return 2.0 * np.logical_and(pred, gt).sum() / (a + b)


def iou(pred_mask, gt_mask) -> float:
    pred, gt = _check_masks(pred_mask, gt_mask)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return np.logical_and(pred, gt).sum() / union


def vol_error_pct(pred_mask, gt_mask):
    """100 * | |pred| - |gt| | / |gt|; None when the ground truth is empty."""
    pred, gt = _check_masks(pred_mask, gt_mask)
    b = gt.sum()
    if b == 0:
        return None
    return 100.0 * abs(float(pred.sum()) - float(b)) / float(b)
