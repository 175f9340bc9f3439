"""Kernel benchmark: compiled core vs numpy fallback.

Usage: python -m voxbox.bench [--repeats N]
Times conv3d / conv_transpose3d forward and backward on decoder-like
shapes and prints a comparison table. Also asserts that the two backends
agree bit-for-bit, since speed is worthless if they diverge.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from .kernels import numpy_backend

try:
    from .kernels import _core
except ImportError:
    _core = None

SHAPES = [
    # (label, x shape, w shape, stride, padding)
    ("proj 1x1x1", (1, 64, 16, 14, 14), (32, 64, 1, 1, 1), (1, 1, 1), (0, 0, 0)),
    ("refine 3x3x3", (1, 32, 16, 14, 14), (32, 32, 3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ("head 3x3x3", (1, 64, 16, 28, 28), (32, 64, 3, 3, 3), (1, 1, 1), (1, 1, 1)),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(repeats: int = 3, dtype=np.float32) -> None:
    rng = np.random.default_rng(0)
    print(f"dtype={np.dtype(dtype).name}, repeats={repeats} (best-of)")
    if _core is None:
        print("compiled core not built; only the numpy fallback is available")
    header = f"{'case':<24}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, xs, ws, stride, padding in SHAPES:
        x = rng.normal(size=xs).astype(dtype)
        w = rng.normal(size=ws).astype(dtype)
        t_np, out_np = _time(lambda: numpy_backend.conv3d_forward(x, w, stride, padding), repeats)
        if _core is not None:
            t_cy, out_cy = _time(lambda: _core.conv3d_forward(x, w, stride, padding), repeats)
            assert np.array_equal(out_np, out_cy), f"{label}: backends diverged"
            print(f"{label:<24}{t_np * 1e3:>12.2f}{t_cy * 1e3:>13.2f}{t_np / t_cy:>8.1f}x")
        else:
            print(f"{label:<24}{t_np * 1e3:>12.2f}{'-':>13}{'-':>9}")

        g = rng.normal(size=out_np.shape).astype(dtype)
        t_np, dx_np = _time(
            lambda: numpy_backend.conv3d_backward_x(g, w, xs[2:], stride, padding), repeats
        )
        if _core is not None:
            def _core_dx():
                full = _core.conv_transpose3d_forward(g, w, stride, (0, 0, 0))
                return numpy_backend._window(full, xs[2:], padding)

            t_cy, dx_cy = _time(_core_dx, repeats)
            assert np.array_equal(dx_np, dx_cy), f"{label} backward_x: backends diverged"
            print(f"{label + ' (dx)':<24}{t_np * 1e3:>12.2f}{t_cy * 1e3:>13.2f}{t_np / t_cy:>8.1f}x")
        else:
            print(f"{label + ' (dx)':<24}{t_np * 1e3:>12.2f}{'-':>13}{'-':>9}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--f64", action="store_true", help="benchmark in float64")
    args = ap.parse_args(argv)
    run(repeats=args.repeats, dtype=np.float64 if args.f64 else np.float32)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
