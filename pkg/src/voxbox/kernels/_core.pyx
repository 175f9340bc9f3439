# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels.

Loop nests put the kernel taps outside and sweep output rows innermost,
so the hot loop is a contiguous multiply-add the compiler can vectorize.
Per output element the contributions still arrive in (ci, kd, kh, kw)
order, matching the numpy fallback and the reference loop oracle
bit-for-bit (requires -ffp-contract=off; see setup.py).

Weight-gradient reductions are deliberately absent: BLAS-backed numpy
wins there, and the dispatcher routes them accordingly.
"""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _floor_div(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    # cdivision gives C truncation; adjust to floor (b is always positive here)
    cdef Py_ssize_t q = a // b
    if a % b != 0 and a < 0:
        q -= 1
    return q


cdef inline Py_ssize_t _ceil_div(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return _floor_div(a + b - 1, b)


def conv3d_forward(real[:, :, :, :, ::1] x, real[:, :, :, :, ::1] w,
                   stride, padding):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1]
    cdef Py_ssize_t di = x.shape[2], hi = x.shape[3], wi = x.shape[4]
    cdef Py_ssize_t co = w.shape[0]
    cdef Py_ssize_t kd = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = padding[0], ph = padding[1], pw = padding[2]
    cdef Py_ssize_t do = (di + 2 * pd - kd) // sd + 1
    cdef Py_ssize_t ho = (hi + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo = (wi + 2 * pw - kw) // sw + 1

    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, co, do, ho, wo), dtype=dtype)
    cdef real[:, :, :, :, ::1] out = out_arr

    cdef Py_ssize_t b, o, c, a, e, f, od, oh, ow
    cdef Py_ssize_t od_lo, od_hi, oh_lo, oh_hi, ow_lo, ow_hi, id_, ih, ix0
    cdef real wv
    with nogil:
        for b in range(n):
            for o in range(co):
                for c in range(ci):
                    for a in range(kd):
                        od_lo = max(<Py_ssize_t>0, _ceil_div(pd - a, sd))
                        od_hi = min(do - 1, _floor_div(di - 1 + pd - a, sd))
                        for e in range(kh):
                            oh_lo = max(<Py_ssize_t>0, _ceil_div(ph - e, sh))
                            oh_hi = min(ho - 1, _floor_div(hi - 1 + ph - e, sh))
                            for f in range(kw):
                                ow_lo = max(<Py_ssize_t>0, _ceil_div(pw - f, sw))
                                ow_hi = min(wo - 1, _floor_div(wi - 1 + pw - f, sw))
                                wv = w[o, c, a, e, f]
                                for od in range(od_lo, od_hi + 1):
                                    id_ = od * sd + a - pd
                                    for oh in range(oh_lo, oh_hi + 1):
                                        ih = oh * sh + e - ph
                                        ix0 = f - pw
                                        if sw == 1:
                                            for ow in range(ow_lo, ow_hi + 1):
                                                out[b, o, od, oh, ow] = out[b, o, od, oh, ow] + wv * x[b, c, id_, ih, ow + ix0]
                                        else:
                                            for ow in range(ow_lo, ow_hi + 1):
                                                out[b, o, od, oh, ow] = out[b, o, od, oh, ow] + wv * x[b, c, id_, ih, ow * sw + ix0]
    return out_arr


def conv_transpose3d_forward(real[:, :, :, :, ::1] x, real[:, :, :, :, ::1] w,
                             stride, padding):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1]
    cdef Py_ssize_t di = x.shape[2], hi = x.shape[3], wi = x.shape[4]
    cdef Py_ssize_t co = w.shape[1]
    cdef Py_ssize_t kd = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = padding[0], ph = padding[1], pw = padding[2]
    cdef Py_ssize_t do = (di - 1) * sd + kd - 2 * pd
    cdef Py_ssize_t ho = (hi - 1) * sh + kh - 2 * ph
    cdef Py_ssize_t wo = (wi - 1) * sw + kw - 2 * pw

    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, co, do, ho, wo), dtype=dtype)
    cdef real[:, :, :, :, ::1] out = out_arr

    # scatter with taps outermost: per output element the contributions
    # arrive ordered (ci, kd, kh, kw), same as the gather formulation
    cdef Py_ssize_t b, o, c, a, e, f, id_, ih, iw
    cdef Py_ssize_t id_lo, id_hi, ih_lo, ih_hi, iw_lo, iw_hi, od, oh, ox0
    cdef real wv
    with nogil:
        for b in range(n):
            for c in range(ci):
                for o in range(co):
                    for a in range(kd):
                        id_lo = max(<Py_ssize_t>0, _ceil_div(pd - a, sd))
                        id_hi = min(di - 1, _floor_div(do - 1 + pd - a, sd))
                        for e in range(kh):
                            ih_lo = max(<Py_ssize_t>0, _ceil_div(ph - e, sh))
                            ih_hi = min(hi - 1, _floor_div(ho - 1 + ph - e, sh))
                            for f in range(kw):
                                iw_lo = max(<Py_ssize_t>0, _ceil_div(pw - f, sw))
                                iw_hi = min(wi - 1, _floor_div(wo - 1 + pw - f, sw))
                                wv = w[c, o, a, e, f]
                                for id_ in range(id_lo, id_hi + 1):
                                    od = id_ * sd + a - pd
                                    for ih in range(ih_lo, ih_hi + 1):
                                        oh = ih * sh + e - ph
                                        ox0 = f - pw
                                        if sw == 1:
                                            for iw in range(iw_lo, iw_hi + 1):
                                                out[b, o, od, oh, iw + ox0] = out[b, o, od, oh, iw + ox0] + wv * x[b, c, id_, ih, iw]
                                        else:
                                            for iw in range(iw_lo, iw_hi + 1):
                                                out[b, o, od, oh, iw * sw + ox0] = out[b, o, od, oh, iw * sw + ox0] + wv * x[b, c, id_, ih, iw]
    return out_arr
