"""Voxel grids with physical geometry.

Voxels are stored (D, H, W). Direction columns give each voxel axis's world
direction with world components ordered (z, y, x) = (Superior, Anterior,
Right), and the origin uses the same component order. In this frame the
canonical anatomical orientation (W points Right, H Anterior, D Superior)
is exactly the identity matrix, which is also the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Volume", "LabelVolume"]


def _validate_geometry(spacing, direction):
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (3,) or np.any(spacing <= 0):
        raise ValueError(f"spacing must be three positive values, got {spacing}")
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != (3, 3):
        raise ValueError("direction must be a 3x3 matrix")
    det = abs(np.linalg.det(direction))
    if abs(det - 1.0) > 1e-3:
        raise ValueError(f"direction matrix determinant {det:.6f} not within 1e-3 of +-1")
    return spacing, direction


@dataclass
class Volume:
    voxels: np.ndarray  # (D, H, W) float32
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))  # mm, per (D,H,W) axis
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))  # columns: world dirs of (D,H,W)
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))  # mm
    subject_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {self.voxels.shape}")
        if self.voxels.dtype != np.float32:
            self.voxels = self.voxels.astype(np.float32)
        self.spacing, self.direction = _validate_geometry(self.spacing, self.direction)
        self.origin = np.asarray(self.origin, dtype=np.float64)

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def with_voxels(self, voxels: np.ndarray) -> "Volume":
        return Volume(voxels, self.spacing.copy(), self.direction.copy(), self.origin.copy(), self.subject_id)


@dataclass
class LabelVolume:
    voxels: np.ndarray  # (D, H, W) uint8 in {0, 1}
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    subject_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError(f"label volume must be 3D, got shape {self.voxels.shape}")
        vals = np.unique(self.voxels)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError(f"label volume must be binary, found values {vals[:8]}")
        self.voxels = self.voxels.astype(np.uint8)
        self.spacing, self.direction = _validate_geometry(self.spacing, self.direction)
        self.origin = np.asarray(self.origin, dtype=np.float64)

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def with_voxels(self, voxels: np.ndarray) -> "LabelVolume":
        return LabelVolume(voxels, self.spacing.copy(), self.direction.copy(), self.origin.copy(), self.subject_id)
