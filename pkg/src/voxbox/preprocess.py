"""Deterministic standardization pipeline and training-time augmentation.

Stages: reorientation to the canonical anatomical frame, resampling to a
unified spacing, percentile clipping + min-max scaling + global z-score,
then a foreground-aware center crop. Augmentation (flips, right-angle
rotations) runs only during training and treats the crop as an abstract
grid, so geometry metadata is carried through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import LabelVolume, Volume

__all__ = [
    "PreprocessConfig",
    "reorient_ras",
    "resample",
    "normalize",
    "clip_minmax",
    "foreground_crop",
    "augment",
    "preprocess_subject",
    "median_inplane_spacing",
]


@dataclass(frozen=True)
class PreprocessConfig:
    target_spacing: tuple[float, float, float] | None = None  # None: dataset median, isotropic
    clip_percentiles: tuple[float, float] = (0.5, 99.5)
    crop_extent: tuple[int, int, int] = (128, 128, 128)
    fg_threshold: float = 0.05  # applied to the [0,1]-scaled image, before z-scoring
    aug_flip_prob: float = 0.5
    aug_rot90_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.clip_percentiles
        if not (0 <= lo < hi <= 100):
            raise ValueError(f"clip percentiles must satisfy 0 <= low < high <= 100, got {self.clip_percentiles}")
        if any(c <= 0 for c in self.crop_extent):
            raise ValueError("crop extents must be positive")


# ---------------------------------------------------------------------------
# reorientation

def reorient_ras(vol):
    """Permute/flip voxel axes so W points Right, H Anterior, D Superior.

    In the (z,y,x)-ordered world frame the target direction matrix is the
    identity: each voxel axis's dominant world component sits on the
    diagonal with positive sign.
    """
    direction = vol.direction
    dominant = np.argmax(np.abs(direction), axis=0)  # world component per voxel axis
    if len(set(dominant.tolist())) != 3:
        raise ValueError(f"reorient: degenerate direction matrix, dominant axes {dominant}")

    # voxel axis to place at each output slot
    perm = [int(np.where(dominant == world)[0][0]) for world in range(3)]
    voxels = np.transpose(vol.voxels, perm)
    spacing = vol.spacing[perm]
    new_dir = direction[:, perm].copy()
    origin = vol.origin.copy()

    for a in range(3):
        if new_dir[a, a] < 0:
            voxels = np.flip(voxels, axis=a)
            origin = origin + new_dir[:, a] * spacing[a] * (voxels.shape[a] - 1)
            new_dir[:, a] = -new_dir[:, a]

    cls = type(vol)
    return cls(np.ascontiguousarray(voxels), spacing, new_dir, origin, vol.subject_id)


# ---------------------------------------------------------------------------
# resampling

def _resample_matrix(n_in: int, n_out: int, scale: float, dtype) -> np.ndarray:
    """Like interp_matrix but with an explicit physical coordinate scale
    (new_spacing / old_spacing), so voxel size stays exact after rounding."""
    w = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        w[:, 0] = 1
        return w
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        j = int(np.floor(src))
        j = min(max(j, 0), n_in - 2)
        t = src - j
        w[i, j] = 1 - t
        w[i, j + 1] = t
    return w


def _nearest_indices(n_in: int, n_out: int, scale: float) -> np.ndarray:
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    return np.clip(np.floor(src + 0.5).astype(int), 0, n_in - 1)


def resample(vol, target_spacing):
    """Trilinear for images, nearest-neighbour for labels. New extents are
    round(old * old_spacing / target), the grid corner stays put."""
    target = np.asarray(target_spacing, dtype=np.float64)
    if np.any(target <= 0):
        raise ValueError(f"resample: target spacing must be positive, got {target}")
    old_sp = vol.spacing
    extents = vol.voxels.shape
    new_extents = tuple(max(1, int(np.floor(e * s / t + 0.5))) for e, s, t in zip(extents, old_sp, target))
    scales = [t / s for s, t in zip(old_sp, target)]

    is_label = isinstance(vol, LabelVolume)
    if is_label:
        out = vol.voxels
        for axis in range(3):
            idx = _nearest_indices(extents[axis], new_extents[axis], scales[axis])
            out = np.take(out, idx, axis=axis)
    else:
        out = vol.voxels.astype(np.float32)
        for axis in range(3):
            m = _resample_matrix(extents[axis], new_extents[axis], scales[axis], np.float32)
            out = np.moveaxis(np.tensordot(out, m, axes=([axis], [1])), -1, axis)

    origin = vol.origin + vol.direction @ ((target - old_sp) / 2.0)
    cls = type(vol)
    return cls(np.ascontiguousarray(out), target, vol.direction.copy(), origin, vol.subject_id)


# ---------------------------------------------------------------------------
# intensity standardization

def clip_minmax(vol: Volume, cfg: PreprocessConfig) -> Volume:
    """Percentile clip then rescale to [0,1] (percentiles interpolate
    linearly between order statistics)."""
    v = vol.voxels.astype(np.float64)
    lo, hi = np.percentile(v, cfg.clip_percentiles)
    if hi <= lo:
        raise ValueError("normalize: clipped intensity range is empty (constant image?)")
    v = np.clip(v, lo, hi)
    v = (v - lo) / (hi - lo)
    return vol.with_voxels(v.astype(np.float32))


def normalize(vol: Volume, cfg: PreprocessConfig) -> Volume:
    """Clip, min-max to [0,1], then global z-score."""
    u01 = clip_minmax(vol, cfg)
    v = u01.voxels.astype(np.float64)
    std = v.std()
    if std == 0:
        raise ValueError("normalize: zero standard deviation after clipping")
    v = (v - v.mean()) / std
    return vol.with_voxels(v.astype(np.float32))


# ---------------------------------------------------------------------------
# cropping

def _center_of_mass(mask: np.ndarray):
    idx = np.nonzero(mask)
    if idx[0].size == 0:
        return None
    return np.array([c.mean() for c in idx])


def foreground_crop(vol, lbl, crop_extent, fg_threshold: float = 0.05, fg_reference=None):
    """Window centered on the foreground center of mass, clamped in bounds;
    zero-pads first when the volume is smaller than the crop. Returns
    (volume, label, status) with status 'ok' or 'empty-foreground'."""
    crop = tuple(int(c) for c in crop_extent)
    v = vol.voxels
    l = lbl.voxels
    if v.shape != l.shape:
        raise ValueError(f"crop: image {v.shape} and label {l.shape} extents differ")
    ref = vol.voxels if fg_reference is None else fg_reference

    pads = [(max(0, (c - e) + 1) // 2 if e < c else 0, 0) for c, e in zip(crop, v.shape)]
    pads = [(p[0], max(0, c - (e + p[0]))) for p, c, e in zip(pads, crop, v.shape)]
    if any(p != (0, 0) for p in pads):
        v = np.pad(v, pads)
        l = np.pad(l, pads)
        ref = np.pad(ref, pads)

    com = _center_of_mass(ref > fg_threshold)
    status = "ok"
    if com is None:
        com = (np.asarray(v.shape) - 1) / 2.0
        status = "empty-foreground"

    starts = []
    for c, e, m in zip(crop, v.shape, com):
        s = int(np.floor(m - c / 2.0 + 0.5))
        starts.append(min(max(s, 0), e - c))
    sl = tuple(slice(s, s + c) for s, c in zip(starts, crop))

    shift = np.array([s - p[0] for s, p in zip(starts, pads)], dtype=np.float64)
    origin = vol.origin + vol.direction @ (shift * vol.spacing)
    out_v = Volume(np.ascontiguousarray(v[sl]), vol.spacing.copy(), vol.direction.copy(), origin, vol.subject_id)
    out_l = LabelVolume(np.ascontiguousarray(l[sl]), lbl.spacing.copy(), lbl.direction.copy(), origin, lbl.subject_id)
    return out_v, out_l, status


# ---------------------------------------------------------------------------
# augmentation

_ROT_PLANES = ((0, 1), (0, 2), (1, 2))


def augment(vol, lbl, cfg: PreprocessConfig, rng: np.random.Generator):
    """Random axis flips and one random right-angle rotation, applied
    identically to image and label. Returns (vol, lbl, ops) where ops
    records the drawn transform for reproducibility.

    Rotations only use planes whose two extents are equal, so the grid
    shape (and hence the training partition) survives any draw; on a cubic
    crop every plane qualifies.
    """
    v = vol.voxels
    l = lbl.voxels
    ops: list[tuple] = []
    for axis in range(3):
        if rng.random() < cfg.aug_flip_prob:
            v = np.flip(v, axis=axis)
            l = np.flip(l, axis=axis)
            ops.append(("flip", axis))
    if rng.random() < cfg.aug_rot90_prob:
        planes = [p for p in _ROT_PLANES if v.shape[p[0]] == v.shape[p[1]]]
        if planes:
            k = int(rng.integers(1, 4))
            plane = planes[int(rng.integers(0, len(planes)))]
            v = np.rot90(v, k, axes=plane)
            l = np.rot90(l, k, axes=plane)
            ops.append(("rot90", k, plane))
    return vol.with_voxels(np.ascontiguousarray(v)), lbl.with_voxels(np.ascontiguousarray(l)), ops


def apply_ops_to_coords(coords: np.ndarray, ops, extents) -> tuple[np.ndarray, tuple]:
    """Map voxel coordinates through the recorded augmentation ops
    (test/inspection helper mirroring exactly what augment does to grids)."""
    coords = np.asarray(coords, dtype=np.int64).copy()
    ext = list(extents)
    for op in ops:
        if op[0] == "flip":
            axis = op[1]
            coords[:, axis] = ext[axis] - 1 - coords[:, axis]
        else:
            _, k, (a, b) = op
            for _ in range(k):
                # one np.rot90 step in plane (a,b): new[a] = ext[b]-1-old[b], new[b] = old[a]
                na = ext[b] - 1 - coords[:, b]
                coords[:, b] = coords[:, a]
                coords[:, a] = na
                ext[a], ext[b] = ext[b], ext[a]
    return coords, tuple(ext)


# ---------------------------------------------------------------------------
# full pipeline

def preprocess_subject(vol: Volume, lbl: LabelVolume, cfg: PreprocessConfig, target_spacing=None):
    """Reorient, resample, standardize intensities, foreground-crop.

    The foreground mask thresholds the [0,1]-scaled image before z-scoring
    (sign is meaningless afterwards). Deterministic for a given config.
    """
    spacing = target_spacing if target_spacing is not None else cfg.target_spacing
    if spacing is None:
        raise ValueError("preprocess: target spacing unresolved (pass one or set it in the config)")
    v = reorient_ras(vol)
    l = reorient_ras(lbl)
    v = resample(v, spacing)
    l = resample(l, spacing)
    if v.voxels.shape != l.voxels.shape:
        raise ValueError(f"preprocess: image {v.voxels.shape} and label {l.voxels.shape} diverged after resampling")
    u01 = clip_minmax(v, cfg)
    z = u01.voxels.astype(np.float64)
    std = z.std()
    if std == 0:
        raise ValueError("preprocess: zero standard deviation after clipping")
    zvol = v.with_voxels(((z - z.mean()) / std).astype(np.float32))
    out_v, out_l, status = foreground_crop(
        zvol, l, cfg.crop_extent, fg_threshold=cfg.fg_threshold, fg_reference=u01.voxels
    )
    return out_v, out_l, {"crop_status": status}


def median_inplane_spacing(volumes) -> tuple[float, float, float]:
    """Isotropic target at the median in-plane spacing across subjects."""
    vals = []
    for v in volumes:
        vals.extend([v.spacing[1], v.spacing[2]])
    t = float(np.median(vals))
    return (t, t, t)
