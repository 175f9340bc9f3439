"""Differentiable neural primitives plus plain kernels for the frozen encoder.

Convolutions are cross-correlations (no kernel flip). Resampling uses
align-corners-false coordinates with linear extension beyond the outermost
sample centers, so a linear ramp resamples to the exact ramp at any size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, record

__all__ = [
    "ConvSpec",
    "conv3d",
    "conv_transpose3d",
    "instance_norm3d",
    "interp_trilinear",
    "interp_matrix",
    "resize_bilinear",
    "frozen_kernels",
    "kaiming_uniform",
]


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    transposed: bool = False

    def __post_init__(self):
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("conv spec: channel counts must be positive")
        if any(k <= 0 for k in self.kernel) or any(s <= 0 for s in self.stride):
            raise ValueError("conv spec: kernel and stride extents must be positive")
        if any(p < 0 or p >= k for p, k in zip(self.padding, self.kernel)):
            raise ValueError(f"conv spec: padding {self.padding} must be < kernel {self.kernel}")


def _check_dtypes(op, x, w, b):
    if x.data.dtype != w.data.dtype or (b is not None and b.data.dtype != x.data.dtype):
        raise ValueError(f"{op}: operand dtypes differ ({x.data.dtype} input vs {w.data.dtype} weight)")


def conv3d(x: Tensor, w: Tensor, b, spec: ConvSpec) -> Tensor:
    _check_dtypes("conv3d", x, w, b)
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"conv3d: input has {x.data.shape[1]} channels, weight expects {w.data.shape[1]}"
        )
    out = kernels.conv3d_forward(x.data, w.data, spec.stride, spec.padding)
    if any(e < 1 for e in out.shape[2:]):
        raise ValueError(f"conv3d: non-positive output extents {out.shape[2:]}")
    if b is not None:
        out += b.data[None, :, None, None, None]
    in_extents = x.data.shape[2:]
    kernel = w.data.shape[2:]
    parents = [x, w] if b is None else [x, w, b]

    def bwd(g):
        dx = kernels.conv3d_backward_x(g, w.data, in_extents, spec.stride, spec.padding)
        dw = kernels.conv3d_backward_w(x.data, g, kernel, spec.stride, spec.padding)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3, 4))

    return record(out, parents, bwd, op="conv3d")


def conv_transpose3d(x: Tensor, w: Tensor, b, spec: ConvSpec) -> Tensor:
    """Transposed conv; weight layout (Ci, Co, kd, kh, kw)."""
    _check_dtypes("conv_transpose3d", x, w, b)
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"conv_transpose3d: input has {x.data.shape[1]} channels, weight expects {w.data.shape[0]}"
        )
    out = kernels.conv_transpose3d_forward(x.data, w.data, spec.stride, spec.padding)
    if any(e < 1 for e in out.shape[2:]):
        raise ValueError(f"conv_transpose3d: non-positive output extents {out.shape[2:]}")
    if b is not None:
        out += b.data[None, :, None, None, None]
    kernel = w.data.shape[2:]
    parents = [x, w] if b is None else [x, w, b]

    def bwd(g):
        dx = kernels.conv_transpose3d_backward_x(g, w.data, spec.stride, spec.padding)
        dw = kernels.conv_transpose3d_backward_w(x.data, g, kernel, spec.stride, spec.padding)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3, 4))

    return record(out, parents, bwd, op="conv_transpose3d")


def instance_norm3d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(n,c) standardization over the spatial voxels, then affine."""
    n, c, d, h, w = x.data.shape
    if d * h * w < 2:
        raise ValueError("instance_norm3d: spatial volume must contain at least 2 voxels")
    sp = (2, 3, 4)
    mu = x.data.mean(axis=sp, keepdims=True)
    var = x.data.var(axis=sp, keepdims=True)
    invstd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = (x.data - mu) * invstd
    out = gamma.data[None, :, None, None, None] * xhat + beta.data[None, :, None, None, None]

    def bwd(g):
        # xhat is recomputed from the input reference; only mu/invstd are retained
        xh = (x.data - mu) * invstd
        dgamma = (g * xh).sum(axis=(0, 2, 3, 4))
        dbeta = g.sum(axis=(0, 2, 3, 4))
        dxh = g * gamma.data[None, :, None, None, None]
        dx = invstd * (dxh - dxh.mean(axis=sp, keepdims=True) - xh * (dxh * xh).mean(axis=sp, keepdims=True))
        return dx, dgamma, dbeta

    return record(out, [x, gamma, beta], bwd, extra_bytes=mu.nbytes + invstd.nbytes, op="instance_norm3d")


def interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """1D resampling weights (n_out, n_in), align-corners-false.

    Coordinates past the outermost sample centers extend the edge segment
    linearly, so equal extents give exact 0/1 weights (bit-exact identity).
    """
    w = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        w[:, 0] = 1
        return w
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        j = int(np.floor(src))
        j = min(max(j, 0), n_in - 2)
        t = src - j
        w[i, j] = 1 - t
        w[i, j + 1] = t
    return w


def _apply_axis(x: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(x, w, axes=([axis], [1])), -1, axis)


def interp_trilinear(x: Tensor, out_extents) -> Tensor:
    """Trilinear resampling of the trailing three axes; linear, so backward
    is the transposed weight stencil and nothing heavy is saved."""
    de, he, we = (int(e) for e in out_extents)
    if de <= 0 or he <= 0 or we <= 0:
        raise ValueError(f"interp_trilinear: non-positive output extents {(de, he, we)}")
    d, h, w = x.data.shape[-3:]
    if (d, h, w) == (de, he, we):
        out = x.data.copy()

        def bwd_id(g):
            return (g.copy(),)

        return record(out, [x], bwd_id, op="interp")
    wd = interp_matrix(d, de, x.data.dtype)
    wh = interp_matrix(h, he, x.data.dtype)
    ww = interp_matrix(w, we, x.data.dtype)
    nd = x.data.ndim
    out = _apply_axis(_apply_axis(_apply_axis(x.data, wd, nd - 3), wh, nd - 2), ww, nd - 1)

    def bwd(g):
        dx = _apply_axis(_apply_axis(_apply_axis(g, wd.T, nd - 3), wh.T, nd - 2), ww.T, nd - 1)
        return (np.ascontiguousarray(dx),)

    return record(out, [x], bwd, extra_bytes=wd.nbytes + wh.nbytes + ww.nbytes, op="interp")


def resize_bilinear(img: np.ndarray, out_hw) -> np.ndarray:
    """Plain 2D resize (same convention as interp_trilinear), off the tape."""
    ho, wo = out_hw
    h, w = img.shape[-2:]
    if (h, w) == (ho, wo):
        return img.copy()
    wh = interp_matrix(h, ho, img.dtype)
    ww = interp_matrix(w, wo, img.dtype)
    nd = img.ndim
    return _apply_axis(_apply_axis(img, wh, nd - 2), ww, nd - 1)


# ---------------------------------------------------------------------------
# non-differentiable kernels for the frozen encoder


def _layernorm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(x: np.ndarray) -> np.ndarray:
    # tanh form; the frozen encoder needs no gradients
    c = float(np.sqrt(2.0 / np.pi))
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


_FROZEN = {"layernorm": _layernorm, "softmax": _softmax, "gelu": _gelu}


def frozen_kernels(kind: str, x: np.ndarray) -> np.ndarray:
    """Plain numeric forward for the frozen encoder; never on the tape."""
    try:
        fn = _FROZEN[kind]
    except KeyError:
        raise ValueError(f"unknown frozen kernel {kind!r}") from None
    return fn(np.asarray(x))


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
