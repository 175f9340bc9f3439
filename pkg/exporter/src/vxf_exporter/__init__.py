"""Offline feature exporter: run a frozen 2D encoder over every axial slice
of preprocessed volumes and write VXF1 feature files for the training
engine's imported backend.

Exports are geometry-agnostic with respect to training sub-volumes: the
full-depth, full-slice features are stored once per subject, and the
engine windows the depth axis as its partition requires.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import build_backbone
from .nifti_in import read_volume
from .vxf_out import write_vxf

__version__ = "0.1.0"

__all__ = ["ExportJob", "export_features", "discover_subjects"]


@dataclass
class ExportJob:
    subjects: list[str]
    data_dir: str
    out_dir: str
    backbone: str = "stub"  # "stub" or "dinov3"
    model_id: str = "facebook/dinov3-vitb16-pretrain-lvd1689m"
    tap_layers: tuple[int, int, int, int] = (3, 6, 9, 12)
    native_size: int = 224
    patch_size: int = 16
    stub_seed: int = 0

    def __post_init__(self):
        if len(self.tap_layers) != 4 or list(self.tap_layers) != sorted(set(self.tap_layers)):
            raise ValueError(f"need four strictly increasing tap layers, got {self.tap_layers}")
        if self.native_size % self.patch_size:
            raise ValueError("native size must be divisible by the patch size")


def discover_subjects(data_dir) -> list[str]:
    return sorted(p.name.split("_img.nii")[0] for p in Path(data_dir).glob("*_img.nii*"))


def export_features(job: ExportJob, log=lambda msg: None) -> list[Path]:
    """Encode every subject slice by slice; returns the written file paths."""
    enc = build_backbone(job.backbone, job.model_id, job.native_size, job.patch_size,
                         seed=job.stub_seed)
    if max(job.tap_layers) > enc.max_layer():
        raise ValueError(
            f"tap layer {max(job.tap_layers)} exceeds the backbone's {enc.max_layer()} layers"
        )
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = job.native_size // job.patch_size
    written = []
    for sid in job.subjects:
        img_path = None
        for suffix in (".nii.gz", ".nii"):
            cand = Path(job.data_dir) / f"{sid}_img{suffix}"
            if cand.exists():
                img_path = cand
                break
        if img_path is None:
            raise FileNotFoundError(f"no preprocessed image for subject {sid!r} under {job.data_dir}")
        vox = read_volume(img_path)  # (D, H, W)
        d, h, w = vox.shape
        slices = [vox[i] for i in range(d)]
        per_slice = enc.encode_slices(slices, job.tap_layers)
        levels = [
            np.stack([per_slice[i][k] for i in range(d)], axis=1)  # (d_emb, D, G, G)
            for k in range(4)
        ]
        for lv in levels:
            if lv.shape[2:] != (g, g):
                raise ValueError(f"backbone produced grid {lv.shape[2:]}, expected ({g}, {g})")
        tag = f"{enc.model_tag};taps={','.join(str(t) for t in job.tap_layers)};src={d}x{h}x{w}"
        path = out_dir / f"{sid}.vxf"
        write_vxf(levels, sid, tag, path)
        log(f"{sid}: {d} slices -> {path} ({levels[0].shape[0]}x{d}x{g}x{g} per level)")
        written.append(path)
    return written
