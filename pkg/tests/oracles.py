"""Independent reference implementations used only by tests.

Everything here is deliberately naive: explicit Python loops, sorting,
brute-force accumulation. None of it shares code with the package, so
agreement is meaningful. The convolution loops accumulate per output
element in (ci, kd, kh, kw) order with bias added last; the production
kernels pin the same order, which is why bit-for-bit comparison is fair.
"""

from __future__ import annotations

import numpy as np


def conv3d_naive(x, w, b, stride, padding):
    n, ci, di, hi, wi = x.shape
    co, _, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    do = (di + 2 * pd - kd) // sd + 1
    ho = (hi + 2 * ph - kh) // sh + 1
    wo = (wi + 2 * pw - kw) // sw + 1
    out = np.zeros((n, co, do, ho, wo), dtype=x.dtype)
    for bn in range(n):
        for o in range(co):
            for od in range(do):
                for oh in range(ho):
                    for ow in range(wo):
                        acc = x.dtype.type(0)
                        for c in range(ci):
                            for a in range(kd):
                                idd = od * sd + a - pd
                                if idd < 0 or idd >= di:
                                    continue
                                for e in range(kh):
                                    ih = oh * sh + e - ph
                                    if ih < 0 or ih >= hi:
                                        continue
                                    for f in range(kw):
                                        iw = ow * sw + f - pw
                                        if iw < 0 or iw >= wi:
                                            continue
                                        acc += x[bn, c, idd, ih, iw] * w[o, c, a, e, f]
                        out[bn, o, od, oh, ow] = acc if b is None else acc + b[o]
    return out


def conv_transpose3d_naive(x, w, b, stride, padding):
    n, ci, di, hi, wi = x.shape
    _, co, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = padding
    do = (di - 1) * sd + kd - 2 * pd
    ho = (hi - 1) * sh + kh - 2 * ph
    wo = (wi - 1) * sw + kw - 2 * pw
    out = np.zeros((n, co, do, ho, wo), dtype=x.dtype)
    for bn in range(n):
        for o in range(co):
            for od in range(do):
                for oh in range(ho):
                    for ow in range(wo):
                        acc = x.dtype.type(0)
                        for c in range(ci):
                            for a in range(kd):
                                t = od + pd - a
                                if t < 0 or t % sd:
                                    continue
                                idd = t // sd
                                if idd >= di:
                                    continue
                                for e in range(kh):
                                    t = oh + ph - e
                                    if t < 0 or t % sh:
                                        continue
                                    ih = t // sh
                                    if ih >= hi:
                                        continue
                                    for f in range(kw):
                                        t = ow + pw - f
                                        if t < 0 or t % sw:
                                            continue
                                        iw = t // sw
                                        if iw >= wi:
                                            continue
                                        acc += x[bn, c, idd, ih, iw] * w[c, o, a, e, f]
                        out[bn, o, od, oh, ow] = acc if b is None else acc + b[o]
    return out


def fd_gradient(f, x, eps=1e-6, sample=None, rng=None):
    """Central finite differences of scalar f at x, optionally on a coordinate sample.

    Returns (grad_estimate, indices); grad_estimate holds values only at the
    sampled flat indices (everything else zero).
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    if sample is None or sample >= flat.size:
        idx = np.arange(flat.size)
    else:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(flat.size, size=sample, replace=False)
    g = np.zeros_like(flat)
    for i in idx:
        h = eps * max(1.0, abs(flat[i]))
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x.reshape(x.shape))
        flat[i] = orig - h
        fm = f(x.reshape(x.shape))
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape), idx


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.reshape(-1)), np.linalg.norm(b.reshape(-1)), floor)
    return np.linalg.norm((a - b).reshape(-1)) / denom


def check_grad(f, analytic, x, tol, eps=1e-6, sample=None, rng=None):
    """Compare analytic grad to central differences on sampled coordinates."""
    num, idx = fd_gradient(f, x, eps=eps, sample=sample, rng=rng)
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)[idx]
    n = num.reshape(-1)[idx]
    err = rel_err(a, n)
    assert err <= tol, f"gradient mismatch: rel err {err:.3e} > {tol:.0e}"
    return err


def interp1d_points(x, out_len):
    """Hand evaluation of the resampling formula in 1D.

    Output sample i reads input coordinate (i + 0.5) * in/out - 0.5 and
    interpolates linearly between the two nearest samples, extending the
    edge segment's line beyond the outermost sample centers.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    out = np.empty(out_len)
    for i in range(out_len):
        src = (i + 0.5) * n / out_len - 0.5
        if n == 1:
            out[i] = x[0]
            continue
        j = int(np.floor(src))
        j = min(max(j, 0), n - 2)
        t = src - j
        out[i] = (1 - t) * x[j] + t * x[j + 1]
    return out


def percentile_sorted(values, q):
    """Percentile by linear interpolation between order statistics."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if len(v) == 1:
        return v[0]
    pos = q / 100.0 * (len(v) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    t = pos - lo
    return (1 - t) * v[lo] + t * v[hi]


def center_of_mass_naive(vol, threshold):
    """Brute-force voxel accumulation of the foreground center of mass."""
    total = 0.0
    acc = np.zeros(3)
    for z in range(vol.shape[0]):
        for y in range(vol.shape[1]):
            for x in range(vol.shape[2]):
                if vol[z, y, x] > threshold:
                    acc += (z, y, x)
                    total += 1
    if total == 0:
        return None
    return acc / total
