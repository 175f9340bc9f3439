"""Minimal read-only NIfTI-1 loader for preprocessed volumes.

The exporter talks to the training engine purely through file formats, so
it carries its own small reader: single-file .nii/.nii.gz, 3D, uint8/int16/
float32, little- or big-endian. Returns voxels as (D, H, W) float32 (the
on-disk order is x fastest, so reshaping to (nz, ny, nx) is already that).
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}


def read_volume(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < HEADER_SIZE:
        raise ValueError(f"{path}: shorter than a NIfTI-1 header")
    if raw[344:347] != b"n+1":
        raise ValueError(f"{path}: magic {raw[344:348]!r} is not 'n+1'")

    endian = "<"
    if struct.unpack_from("<i", raw, 0)[0] != HEADER_SIZE:
        endian = ">"
        if struct.unpack_from(">i", raw, 0)[0] != HEADER_SIZE:
            raise ValueError(f"{path}: bad sizeof_hdr in both byte orders")

    dim = struct.unpack_from(endian + "8h", raw, 40)
    if dim[0] != 3:
        raise ValueError(f"{path}: need a 3D volume, dim[0]={dim[0]}")
    (datatype,) = struct.unpack_from(endian + "h", raw, 70)
    if datatype not in _DTYPES:
        raise ValueError(f"{path}: unsupported datatype code {datatype}")
    (vox_offset,) = struct.unpack_from(endian + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", raw, 112)

    nx, ny, nz = dim[1], dim[2], dim[3]
    np_dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)
    start = int(vox_offset) if vox_offset >= HEADER_SIZE else HEADER_SIZE
    end = start + nx * ny * nz * np_dtype.itemsize
    if end > len(raw):
        raise ValueError(f"{path}: truncated payload")
    vox = np.frombuffer(raw[start:end], dtype=np_dtype).reshape(nz, ny, nx).astype(np.float32)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        if scl_slope != 0.0:
            vox = vox * scl_slope + scl_inter
    return np.ascontiguousarray(vox)
