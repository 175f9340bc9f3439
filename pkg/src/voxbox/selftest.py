"""Built-in property suites behind `voxbox selftest`.

Runs the gradient-equivalence and memory-bound checks (plus a few kernel
and metric spot checks) on synthetic data and prints one line per suite.
These mirror the repository's acceptance tests in compact form so an
installed copy can vouch for itself.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .losses import LossConfig, dsc, iou
from .model import SegModel
from .optim import OptimState
from .partition import make_partition
from .trainer import TrainConfig, full_volume_gradients, plain_step, two_pass_step

__all__ = ["run_selftest"]


def _toy_model(dtype=np.float64, seed=3) -> SegModel:
    enc = EncoderConfig(backend="toy", native_size=8, patch_size=4, d_emb=8,
                        tap_layers=(1, 2, 3, 4), design_depth=16, toy_blocks=4, toy_heads=2)
    dec = DecoderConfig(c_proj=4, c_ref=4, c_head=4)
    return SegModel(enc, dec, dtype=dtype, param_seed=seed)


def _rel(a, b):
    denom = max(np.linalg.norm(a.reshape(-1)), np.linalg.norm(b.reshape(-1)), 1e-300)
    return float(np.linalg.norm((a - b).reshape(-1)) / denom)


def _instance(dtype):
    rng = np.random.default_rng(0)
    vol = rng.normal(size=(16, 16, 16)).astype(dtype)
    gt = (rng.random((16, 16, 16)) > 0.7).astype(np.uint8)
    return vol, gt


def check_gradient_equivalence() -> tuple[bool, str]:
    worst = 0.0
    for dtype, tol in ((np.float64, 1e-10), (np.float32, 1e-4)):
        model = _toy_model(dtype=dtype)
        vol, gt = _instance(dtype)
        part = make_partition((16, 16, 16), (8, 8, 8))
        ref = full_volume_gradients(vol, gt, part, model, LossConfig())
        acc = _accumulated_gradients(vol, gt, part, model)
        err = max(_rel(ref[n], acc[n]) for n in ref)
        worst = max(worst, err / tol)
        if err > tol:
            return False, f"{np.dtype(dtype).name}: rel err {err:.2e} > {tol:.0e}"
    return True, f"worst err at {worst:.3f} of tolerance"


def _accumulated_gradients(vol, gt, part, model):
    from .losses import dice_ce_loss
    from .tensor import Tensor, assemble, backward, no_grad, tape

    t = tape()
    t.clear()
    x5 = vol[None, None]
    cube = part.cube_extents
    with no_grad():
        blocks = [
            model.forward_subcube(x5[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]], mode="suspended")
            for z, y, x in part.offsets
        ]
        asm = assemble(blocks, part)
    leaf = Tensor(asm.data, requires_grad=True)
    loss = dice_ce_loss(leaf, gt[None, None].astype(model.dtype))
    backward(loss, np.asarray(1.0, dtype=model.dtype))
    up = leaf.grad.copy()
    t.clear()
    for z, y, x in part.offsets:
        xi = x5[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]]
        li = model.forward_subcube(xi, mode="tracked")
        backward(li, np.ascontiguousarray(up[:, :, z : z + cube[0], y : y + cube[1], x : x + cube[2]]))
        t.clear()
    out = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
           for n, p in model.parameters().items()}
    model.zero_grads()
    return out


def check_degenerate_partition() -> tuple[bool, str]:
    vol, gt = _instance(np.float64)
    cfg = TrainConfig(epochs=10, warmup_epochs=2)
    m1 = _toy_model()
    m2 = _toy_model()
    part1 = make_partition((16, 16, 16), (16, 16, 16))
    two_pass_step(vol, gt, part1, m1, OptimState(lr=1e-3, weight_decay=1e-4), cfg)
    plain_step(vol, gt, m2, OptimState(lr=1e-3, weight_decay=1e-4), cfg)
    for (n, a), b in zip(m1.parameters().items(), m2.parameters().values()):
        if not np.array_equal(a.data, b.data):
            return False, f"parameter {n} diverged"
    return True, "single-cube updates bit-equal to a plain step"


def check_memory_bound() -> tuple[bool, str]:
    vol, gt = _instance(np.float64)
    cfg = TrainConfig(epochs=10, warmup_epochs=2)
    peaks = {}
    for name, cube in (("eight", (2, 16, 16)), ("one", (16, 16, 16))):
        model = _toy_model()
        part = make_partition((16, 16, 16), cube)
        peaks[name] = two_pass_step(vol, gt, part, model, OptimState(), cfg).peak_tape_bytes
    ratio = peaks["eight"] / peaks["one"]
    return ratio <= 0.25, f"peak tape ratio {ratio:.3f} (eight sub-cubes vs one)"


def check_conv_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 2, 5, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3, 3))
    got = kernels.conv3d_forward(x, w, (1, 1, 1), (0, 0, 0))
    ref = np.zeros_like(got)
    for o in range(3):
        for od in range(3):
            for oh in range(3):
                for ow in range(3):
                    acc = 0.0
                    for c in range(2):
                        for a in range(3):
                            for e in range(3):
                                for f in range(3):
                                    acc += x[0, c, od + a, oh + e, ow + f] * w[o, c, a, e, f]
                    ref[0, o, od, oh, ow] = acc
    if not np.array_equal(got, ref):
        return False, f"max dev {np.abs(got - ref).max():.3e}"
    y = kernels.conv3d_forward(x, w, (2, 1, 2), (1, 0, 1))
    g = rng.normal(size=y.shape)
    dx = kernels.conv3d_backward_x(g, w, x.shape[2:], (2, 1, 2), (1, 0, 1))
    adjoint = abs(float((y * g).sum() - (x * dx).sum()) / (y * g).sum())
    return adjoint <= 1e-10, f"bit-exact forward; adjoint rel err {adjoint:.2e}"


def check_metric_identity() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        a = rng.random((4, 4, 4)) > 0.5
        b = rng.random((4, 4, 4)) > 0.5
        d = dsc(a, b)
        j = iou(a, b)
        worst = max(worst, abs(j - d / (2 - d)))
    return worst <= 1e-12, f"max |IoU - DSC/(2-DSC)| = {worst:.2e}"


SUITES = [
    ("gradient-equivalence", check_gradient_equivalence),
    ("degenerate-partition", check_degenerate_partition),
    ("memory-bound", check_memory_bound),
    ("conv-oracle", check_conv_oracle),
    ("metric-identity", check_metric_identity),
]


def run_selftest(print_fn=print) -> int:
    failures = 0
    for name, fn in SUITES:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        print_fn(f"[{status}] {name}: {detail}")
        failures += 0 if ok else 1
    print_fn(f"{len(SUITES) - failures}/{len(SUITES)} suites passed")
    return 0 if failures == 0 else 1
