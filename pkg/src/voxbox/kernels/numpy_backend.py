"""Vectorized numpy convolution kernels.

Forward accumulation order is pinned: input channel outermost, then kernel
taps in (kd, kh, kw) order. Bias is added by the caller, last. The compiled
backend and the reference loop implementations follow the same order, which
is what makes the three agree bit-for-bit in a given dtype (IEEE adds in an
identical sequence). Do not reorder these loops.
"""

from __future__ import annotations

import numpy as np


def conv3d_forward(x, w, stride, padding):
    """Cross-correlation, no bias. x:(N,Ci,D,H,W) w:(Co,Ci,kd,kh,kw)."""
    n, ci, di, hi, wi = x.shape
    co, _, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    do = (di + 2 * pd - kd) // sd + 1
    ho = (hi + 2 * ph - kh) // sh + 1
    wo = (wi + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    out = np.zeros((n, co, do, ho, wo), dtype=x.dtype)
    for c in range(ci):
        xc = xp[:, c]
        for a in range(kd):
            for bb in range(kh):
                for cc in range(kw):
                    xs = xc[:, a : a + do * sd : sd, bb : bb + ho * sh : sh, cc : cc + wo * sw : sw]
                    out += w[:, c, a, bb, cc][None, :, None, None, None] * xs[:, None]
    return out


def conv3d_backward_w(x, dy, kernel, stride, padding):
    kd, kh, kw = kernel
    sd, sh, sw = stride
    pd, ph, pw = padding
    _, _, do, ho, wo = dy.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    ci = x.shape[1]
    co = dy.shape[1]
    dw = np.empty((co, ci, kd, kh, kw), dtype=x.dtype)
    for a in range(kd):
        for bb in range(kh):
            for cc in range(kw):
                xs = xp[:, :, a : a + do * sd : sd, bb : bb + ho * sh : sh, cc : cc + wo * sw : sw]
                dw[:, :, a, bb, cc] = np.tensordot(dy, xs, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return dw


def conv3d_backward_x(dy, w, in_extents, stride, padding):
    # w is (Co,Ci,k...); the transpose kernel reads axis 0 as its input
    # channels, which is exactly the reinterpretation the adjoint needs.
    # The adjoint window is [p, p+Di) of the uncropped scatter: unlike a
    # standard transposed conv it is asymmetric, since a strided forward
    # can read input past (Do-1)s+k-2p.
    full = conv_transpose3d_forward(dy, w, stride, (0, 0, 0))
    return _window(full, in_extents, padding)


def _window(full, in_extents, padding):
    di, hi, wi = in_extents
    pd, ph, pw = padding
    dx = full[:, :, pd : pd + di, ph : ph + hi, pw : pw + wi]
    pad = [(0, 0), (0, 0)] + [(0, want - have) for want, have in zip((di, hi, wi), dx.shape[2:])]
    if any(p[1] for p in pad):
        dx = np.pad(dx, pad)
    return np.ascontiguousarray(dx)


def conv_transpose3d_forward(x, w, stride, padding):
    """Transposed conv (adjoint of conv3d), no bias. x:(N,Ci,...) w:(Ci,Co,kd,kh,kw)."""
    n, ci, di, hi, wi = x.shape
    _, co, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    de = (di - 1) * sd + kd
    he = (hi - 1) * sh + kh
    we = (wi - 1) * sw + kw
    out = np.zeros((n, co, de, he, we), dtype=x.dtype)
    for c in range(ci):
        xc = x[:, c]
        for a in range(kd):
            for bb in range(kh):
                for cc in range(kw):
                    sl = (
                        slice(None),
                        slice(None),
                        slice(a, a + (di - 1) * sd + 1, sd),
                        slice(bb, bb + (hi - 1) * sh + 1, sh),
                        slice(cc, cc + (wi - 1) * sw + 1, sw),
                    )
                    out[sl] += w[c, :, a, bb, cc][None, :, None, None, None] * xc[:, None]
    return np.ascontiguousarray(out[:, :, pd : de - pd, ph : he - ph, pw : we - pw])


def conv_transpose3d_backward_x(dy, w, stride, padding):
    # the adjoint of the scatter is a plain strided cross-correlation of dy;
    # w stays (Ci,Co,k...) and the conv kernel reads axis 0 as its output side
    return conv3d_forward(dy, w, stride, padding)


def conv_transpose3d_backward_w(x, dy, kernel, stride, padding):
    kd, kh, kw = kernel
    sd, sh, sw = stride
    pd, ph, pw = padding
    n, ci, di, hi, wi = x.shape
    de = (di - 1) * sd + kd
    he = (hi - 1) * sh + kh
    we = (wi - 1) * sw + kw
    dyp = np.pad(
        dy,
        (
            (0, 0),
            (0, 0),
            (pd, de - dy.shape[2] - pd),
            (ph, he - dy.shape[3] - ph),
            (pw, we - dy.shape[4] - pw),
        ),
    )
    dw = np.empty((ci, dy.shape[1], kd, kh, kw), dtype=x.dtype)
    for a in range(kd):
        for bb in range(kh):
            for cc in range(kw):
                ys = dyp[
                    :,
                    :,
                    a : a + (di - 1) * sd + 1 : sd,
                    bb : bb + (hi - 1) * sh + 1 : sh,
                    cc : cc + (wi - 1) * sw + 1 : sw,
                ]
                dw[:, :, a, bb, cc] = np.tensordot(x, ys, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return dw
