"""Convolution kernel dispatch.

Forward and input-gradient convolutions use the compiled core when it is
built (saxpy-style loops, no padded temporaries); weight-gradient
reductions always go through the numpy/BLAS path, which wins for them.
Both implementations share the pinned accumulation order, so switching
backends never changes results within a dtype. Set VOXBOX_KERNELS=numpy
(or =cython) to force a side; `python -m voxbox.bench` compares them.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_backend

try:
    from . import _core
except ImportError:
    _core = None

_FORCED = os.environ.get("VOXBOX_KERNELS", "auto").lower()
if _FORCED == "cython" and _core is None:
    raise ImportError("VOXBOX_KERNELS=cython but the compiled core is not built")
_USE_CORE = _core is not None and _FORCED != "numpy"

BACKEND = "cython" if _USE_CORE else "numpy"


def _c(a):
    return np.ascontiguousarray(a)


def conv3d_forward(x, w, stride, padding):
    if _USE_CORE:
        return _core.conv3d_forward(_c(x), _c(w), tuple(stride), tuple(padding))
    return numpy_backend.conv3d_forward(x, w, stride, padding)


def conv3d_backward_x(dy, w, in_extents, stride, padding):
    if _USE_CORE:
        full = _core.conv_transpose3d_forward(_c(dy), _c(w), tuple(stride), (0, 0, 0))
        return numpy_backend._window(full, in_extents, padding)
    return numpy_backend.conv3d_backward_x(dy, w, in_extents, stride, padding)


def conv3d_backward_w(x, dy, kernel, stride, padding):
    return numpy_backend.conv3d_backward_w(x, dy, kernel, stride, padding)


def conv_transpose3d_forward(x, w, stride, padding):
    if _USE_CORE:
        return _core.conv_transpose3d_forward(_c(x), _c(w), tuple(stride), tuple(padding))
    return numpy_backend.conv_transpose3d_forward(x, w, stride, padding)


def conv_transpose3d_backward_x(dy, w, stride, padding):
    if _USE_CORE:
        return _core.conv3d_forward(_c(dy), _c(w), tuple(stride), tuple(padding))
    return numpy_backend.conv_transpose3d_backward_x(dy, w, stride, padding)


def conv_transpose3d_backward_w(x, dy, kernel, stride, padding):
    return numpy_backend.conv_transpose3d_backward_w(x, dy, kernel, stride, padding)
