"""AdamW with decoupled decay, the warmup/cosine schedule, gradient
clipping, early stopping, and the cross-validation split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["OptimState", "adamw_step", "lr_at", "clip_grad_norm", "early_stop", "cv_split"]


@dataclass
class OptimState:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: OptimState) -> None:
    """One decoupled-weight-decay update:
    w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)."""
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        upd = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data
        p.data = p.data - (state.lr * upd).astype(p.data.dtype)


def lr_at(epoch: int, base_lr: float, epochs: int, warmup_epochs: int) -> float:
    """Linear ramp over the warmup epochs, cosine annealing afterwards."""
    if epoch >= epochs:
        raise ValueError(f"epoch {epoch} out of range for a {epochs}-epoch schedule")
    if epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    span = max(1, epochs - warmup_epochs)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))


def clip_grad_norm(grads, max_norm: float) -> tuple[float, float]:
    """Scale all gradients by min(1, max_norm/||g||2); returns (norm, scale)."""
    if isinstance(grads, dict):
        grads = list(grads.values())
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    scale = 1.0 if norm <= max_norm or norm == 0.0 else max_norm / norm
    if scale != 1.0:
        for g in grads:
            if g is not None:
                g *= g.dtype.type(scale)
    return norm, scale


def early_stop(val_history: list[float], patience: int) -> bool:
    """True once the best value has not improved for `patience` epochs."""
    if len(val_history) <= patience:
        return False
    best_idx = int(np.argmax(val_history))
    return (len(val_history) - 1 - best_idx) >= patience


def cv_split(n_subjects: int, fold: int, k: int = 5, seed: int = 0) -> tuple[list[int], list[int]]:
    """Deterministic k-fold over subject indices; fold f validates on the
    f-th block of the seeded shuffle, remainder spread over leading folds."""
    if not 0 <= fold < k:
        raise ValueError(f"fold {fold} out of range for k={k}")
    if n_subjects < k:
        raise ValueError(f"cannot {k}-fold split {n_subjects} subjects")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_subjects).tolist()
    base = n_subjects // k
    rem = n_subjects % k
    sizes = [base + (1 if i < rem else 0) for i in range(k)]
    start = sum(sizes[:fold])
    val = sorted(order[start : start + sizes[fold]])
    train = sorted(set(order) - set(val))
    return train, val
