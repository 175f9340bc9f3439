"""Evaluation reports (JSON) and qualitative overlays (binary PPM)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["SubjectMetrics", "EvalReport", "write_report", "write_overlay"]

_PLANES = {"axial": 0, "coronal": 1, "sagittal": 2}


@dataclass
class SubjectMetrics:
    subject_id: str
    dsc: float
    iou: float
    vol_error_pct: float | None


@dataclass
class EvalReport:
    subjects: list[SubjectMetrics] = field(default_factory=list)
    config_tag: str = ""

    def mean(self) -> dict:
        if not self.subjects:
            return {"dsc": None, "iou": None, "vol_error_pct": None}
        ve = [s.vol_error_pct for s in self.subjects if s.vol_error_pct is not None]
        return {
            "dsc": float(np.mean([s.dsc for s in self.subjects])),
            "iou": float(np.mean([s.iou for s in self.subjects])),
            "vol_error_pct": float(np.mean(ve)) if ve else None,
        }


def write_report(report: EvalReport, path) -> None:
    doc = {
        "config": report.config_tag,
        "subjects": [asdict(s) for s in report.subjects],
        "mean": report.mean(),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _extract_plane(grid: np.ndarray, plane: str, index: int) -> np.ndarray:
    axis = _PLANES[plane]
    if not 0 <= index < grid.shape[axis]:
        raise ValueError(f"overlay: index {index} out of range for {plane} axis of extent {grid.shape[axis]}")
    return np.take(grid, index, axis=axis)


def _contour(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one 4-neighbour outside the mask."""
    m = mask.astype(bool)
    interior = m.copy()
    shifted = np.zeros_like(m)
    for axis in (0, 1):
        for delta in (-1, 1):
            shifted[...] = False
            src = [slice(None)] * 2
            dst = [slice(None)] * 2
            if delta == 1:
                src[axis], dst[axis] = slice(1, None), slice(None, -1)
            else:
                src[axis], dst[axis] = slice(None, -1), slice(1, None)
            shifted[tuple(dst)] = m[tuple(src)]
            interior &= shifted
    return m & ~interior


def write_overlay(volume, pred, gt, plane: str, index: int, path) -> None:
    """One anatomical plane as a PPM: gray image, red predicted mask,
    green ground-truth contour."""
    if plane not in _PLANES:
        raise ValueError(f"overlay: plane must be one of {sorted(_PLANES)}, got {plane!r}")
    vox = volume.voxels if hasattr(volume, "voxels") else np.asarray(volume)
    p = pred.voxels if hasattr(pred, "voxels") else np.asarray(pred)
    g = gt.voxels if hasattr(gt, "voxels") else np.asarray(gt)
    if p.shape != vox.shape or g.shape != vox.shape:
        raise ValueError(f"overlay: extents differ, volume {vox.shape}, pred {p.shape}, gt {g.shape}")

    img = _extract_plane(vox, plane, index).astype(np.float64)
    pm = _extract_plane(p, plane, index).astype(bool)
    gm = _extract_plane(g, plane, index).astype(bool)

    lo, hi = np.percentile(img, (1.0, 99.0))
    if hi <= lo:
        hi = lo + 1.0
    gray = np.clip((img - lo) / (hi - lo), 0, 1)
    rgb = np.repeat((gray * 255).astype(np.uint8)[..., None], 3, axis=-1)

    # predicted mask tints red at half strength; gt contour drawn solid green
    rgb[pm, 0] = np.minimum(255, rgb[pm, 0].astype(np.int32) // 2 + 128).astype(np.uint8)
    rgb[pm, 1] //= 2
    rgb[pm, 2] //= 2
    contour = _contour(gm)
    rgb[contour] = (0, 255, 0)

    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())
