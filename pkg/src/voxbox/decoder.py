"""Lightweight trainable 3D decoder over the boxed feature pyramid.

Per level: 1x1x1 channel projection, then a 3x3x3 refinement conv. The
shallowest level sets the fusion grid (d, 2G, 2G) through a learned
transposed conv with stride (1,2,2); deeper levels are upsampled there
trilinearly. The concatenated stack runs through two conv + instance norm
+ ReLU blocks and a 1x1x1 logit head, and the logits are upsampled to the
source voxel extents.

With multi_scale=False only the deepest level feeds the head (its conv is
then built with c_ref input channels); all level parameters still exist,
so the unused ones provably receive zero gradient.

The default widths (256/256/352) put the trainable total for a 768-wide
backbone with a 128-deep embedding table at 21,306,337 scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConvSpec, conv3d, instance_norm3d, interp_trilinear, kaiming_uniform
from .tensor import Tensor, concat, relu

__all__ = ["DecoderConfig", "DecoderParams", "decode", "parameter_count"]

LEVELS = 4


@dataclass(frozen=True)
class DecoderConfig:
    c_proj: int = 256
    c_ref: int = 256
    c_head: int = 352
    norm_eps: float = 1e-5


class DecoderParams:
    """Holds every trainable tensor plus the conv geometry."""

    def __init__(self, d_emb: int, cfg: DecoderConfig, multi_scale: bool = True,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.multi_scale = multi_scale
        self.d_emb = d_emb
        dt = np.dtype(dtype)

        def conv_param(co, ci, k):
            fan_in = ci * k[0] * k[1] * k[2]
            w = Tensor(kaiming_uniform(rng, (co, ci) + k, fan_in, dt), requires_grad=True)
            b = Tensor(np.zeros(co, dtype=dt), requires_grad=True)
            return w, b

        self.params: dict[str, Tensor] = {}
        self.specs: dict[str, ConvSpec] = {}

        for k in range(LEVELS):
            w, b = conv_param(cfg.c_proj, d_emb, (1, 1, 1))
            self.params[f"proj{k + 1}.w"], self.params[f"proj{k + 1}.b"] = w, b
            self.specs[f"proj{k + 1}"] = ConvSpec(d_emb, cfg.c_proj, (1, 1, 1))
            w, b = conv_param(cfg.c_ref, cfg.c_proj, (3, 3, 3))
            self.params[f"refine{k + 1}.w"], self.params[f"refine{k + 1}.b"] = w, b
            self.specs[f"refine{k + 1}"] = ConvSpec(cfg.c_proj, cfg.c_ref, (3, 3, 3), padding=(1, 1, 1))

        # transposed fusion conv on the shallowest level, in-plane doubling only
        fan_in = cfg.c_ref * 1 * 2 * 2
        self.params["fuse_up.w"] = Tensor(
            kaiming_uniform(rng, (cfg.c_ref, cfg.c_ref, 1, 2, 2), fan_in, dt), requires_grad=True
        )
        self.params["fuse_up.b"] = Tensor(np.zeros(cfg.c_ref, dtype=dt), requires_grad=True)
        self.specs["fuse_up"] = ConvSpec(cfg.c_ref, cfg.c_ref, (1, 2, 2), stride=(1, 2, 2), transposed=True)

        # head convs feed instance norm, which absorbs any bias: the norm's
        # beta is the only shift that can receive gradient, so the convs
        # carry none (a biased conv before a norm is a provably dead branch)
        head_in = LEVELS * cfg.c_ref if multi_scale else cfg.c_ref
        w, _ = conv_param(cfg.c_head, head_in, (3, 3, 3))
        self.params["head1.w"] = w
        self.specs["head1"] = ConvSpec(head_in, cfg.c_head, (3, 3, 3), padding=(1, 1, 1))
        self.params["norm1.gamma"] = Tensor(np.ones(cfg.c_head, dtype=dt), requires_grad=True)
        self.params["norm1.beta"] = Tensor(np.zeros(cfg.c_head, dtype=dt), requires_grad=True)

        w, _ = conv_param(cfg.c_head, cfg.c_head, (3, 3, 3))
        self.params["head2.w"] = w
        self.specs["head2"] = ConvSpec(cfg.c_head, cfg.c_head, (3, 3, 3), padding=(1, 1, 1))
        self.params["norm2.gamma"] = Tensor(np.ones(cfg.c_head, dtype=dt), requires_grad=True)
        self.params["norm2.beta"] = Tensor(np.zeros(cfg.c_head, dtype=dt), requires_grad=True)

        w, b = conv_param(1, cfg.c_head, (1, 1, 1))
        self.params["final.w"], self.params["final.b"] = w, b
        self.specs["final"] = ConvSpec(cfg.c_head, 1, (1, 1, 1))

        self.parameter_count = parameter_count(self.params)

    def _conv(self, name: str, x: Tensor) -> Tensor:
        spec = self.specs[name]
        w = self.params[f"{name}.w"]
        b = self.params.get(f"{name}.b")
        if spec.transposed:
            return _swapped_transpose(x, w, b, spec)
        return conv3d(x, w, b, spec)


def _swapped_transpose(x: Tensor, w: Tensor, b: Tensor, spec: ConvSpec) -> Tensor:
    """conv_transpose3d with the weight stored (Co,Ci,k) like every other conv."""
    from . import kernels
    from .tensor import record

    wd = np.ascontiguousarray(np.swapaxes(w.data, 0, 1))
    out = kernels.conv_transpose3d_forward(x.data, wd, spec.stride, spec.padding)
    if b is not None:
        out += b.data[None, :, None, None, None]
    kernel = wd.shape[2:]
    parents = [x, w] if b is None else [x, w, b]

    def bwd(g):
        dx = kernels.conv_transpose3d_backward_x(g, wd, spec.stride, spec.padding)
        dw = kernels.conv_transpose3d_backward_w(x.data, g, kernel, spec.stride, spec.padding)
        dws = np.ascontiguousarray(np.swapaxes(dw, 0, 1))
        if b is None:
            return dx, dws
        return dx, dws, g.sum(axis=(0, 2, 3, 4))

    return record(out, parents, bwd, op="conv_transpose3d")


def decode(levels: list[Tensor], source_extents, params: DecoderParams,
           multi_scale: bool = True) -> Tensor:
    """Feature pyramid (post depth-embedding) to voxel logits (1,1,d,h,w)."""
    if len(levels) != LEVELS:
        raise ValueError(f"decode expects {LEVELS} levels, got {len(levels)}")
    shapes = {tuple(lv.data.shape) for lv in levels}
    if len(shapes) != 1:
        raise ValueError(f"decode: inconsistent level extents {sorted(shapes)}")
    if multi_scale != params.multi_scale:
        raise ValueError("decode: multi_scale flag disagrees with the constructed parameters")
    d, g1, g2 = levels[0].data.shape[2:]
    target = (d, 2 * g1, 2 * g2)

    if multi_scale:
        refined = []
        for k in range(LEVELS):
            x = params._conv(f"proj{k + 1}", levels[k])
            refined.append(params._conv(f"refine{k + 1}", x))
        up = [params._conv("fuse_up", refined[0])]
        up += [interp_trilinear(refined[k], target) for k in range(1, LEVELS)]
        x = concat(up, axis=1)
    else:
        x = params._conv("proj4", levels[-1])
        x = params._conv("refine4", x)
        x = interp_trilinear(x, target)

    x = relu(instance_norm3d(params._conv("head1", x), params.params["norm1.gamma"],
                             params.params["norm1.beta"], params.cfg.norm_eps))
    x = relu(instance_norm3d(params._conv("head2", x), params.params["norm2.gamma"],
                             params.params["norm2.beta"], params.cfg.norm_eps))
    x = params._conv("final", x)
    return interp_trilinear(x, source_extents)


def parameter_count(tensors) -> int:
    """Exact count of trainable scalars."""
    if isinstance(tensors, dict):
        tensors = tensors.values()
    return int(sum(t.data.size for t in tensors if t.requires_grad))
