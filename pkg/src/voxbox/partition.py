"""Non-overlapping sub-cube grids used for volume disassembly/reassembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

__all__ = ["Partition", "make_partition", "disassemble"]

_AXES = ("depth", "height", "width")


@dataclass(frozen=True)
class Partition:
    """Tiling of a volume into equal blocks, offsets in lexicographic (z,y,x) order."""

    volume_extents: tuple[int, int, int]
    cube_extents: tuple[int, int, int]
    offsets: tuple[tuple[int, int, int], ...] = field(default=())

    @property
    def cube_count(self) -> int:
        return len(self.offsets)


def make_partition(volume_extents, cube_extents) -> Partition:
    volume_extents = tuple(int(v) for v in volume_extents)
    cube_extents = tuple(int(c) for c in cube_extents)
    for axis, (v, c) in enumerate(zip(volume_extents, cube_extents)):
        if c <= 0 or v <= 0:
            raise ValueError(f"partition: non-positive extent on {_AXES[axis]} axis")
        if v % c != 0:
            raise ValueError(
                f"partition: volume extent {v} not divisible by cube extent {c} on {_AXES[axis]} axis"
            )
    offsets = tuple(
        product(
            range(0, volume_extents[0], cube_extents[0]),
            range(0, volume_extents[1], cube_extents[1]),
            range(0, volume_extents[2], cube_extents[2]),
        )
    )
    return Partition(volume_extents, cube_extents, offsets)


def disassemble(volume: np.ndarray, partition: Partition) -> list[np.ndarray]:
    """Cut the trailing three axes into the partition's blocks (copies)."""
    if volume.shape[-3:] != partition.volume_extents:
        raise ValueError(
            f"disassemble: volume extents {volume.shape[-3:]} do not match partition {partition.volume_extents}"
        )
    d, h, w = partition.cube_extents
    return [
        np.ascontiguousarray(volume[..., z : z + d, y : y + h, x : x + w])
        for z, y, x in partition.offsets
    ]
