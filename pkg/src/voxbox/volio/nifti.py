"""Reader/writer for the NIfTI-1 subset this project needs.

Supported: single-file .nii / .nii.gz, 3D grids, dtypes uint8/int16/float32,
s-form orientation with q-form fallback, optional intensity rescaling via
scl_slope/scl_inter. Voxels come back as (D, H, W); NIfTI's on-disk order
is x-fastest, so the raw buffer reshaped to (nz, ny, nx) is already ours.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from ..volume import LabelVolume, Volume

__all__ = [
    "NiftiError",
    "BadMagicError",
    "UnsupportedDtypeError",
    "TruncatedFileError",
    "read_nifti",
    "write_nifti",
]

HEADER_SIZE = 348
_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_DTYPE_CODES = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.float32): 16}


class NiftiError(ValueError):
    pass


class BadMagicError(NiftiError):
    pass


class UnsupportedDtypeError(NiftiError):
    pass


class TruncatedFileError(NiftiError):
    pass


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _quaternion_matrix(b, c, d, qfac):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    r = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    r[:, 2] *= -1.0 if qfac < 0 else 1.0
    return r


def read_nifti(path, as_label: bool | None = None):
    """Load a volume; returns LabelVolume when the data is binary integers
    (or when as_label is forced)."""
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    if raw[344:347] != b"n+1":
        raise BadMagicError(f"{path}: magic {raw[344:348]!r} is not 'n+1'")

    endian = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        endian = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise NiftiError(f"{path}: sizeof_hdr {sizeof_hdr} != {HEADER_SIZE} in either byte order")

    dim = struct.unpack_from(endian + "8h", raw, 40)
    (datatype,) = struct.unpack_from(endian + "h", raw, 70)
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(endian + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(endian + "2h", raw, 252)

    if dim[0] != 3:
        raise NiftiError(f"{path}: only 3D volumes are supported, dim[0]={dim[0]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if datatype not in _DTYPES:
        raise UnsupportedDtypeError(f"{path}: datatype code {datatype} unsupported (need uint8/int16/float32)")
    np_dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)

    count = nx * ny * nz
    start = int(vox_offset) if vox_offset >= HEADER_SIZE else HEADER_SIZE
    end = start + count * np_dtype.itemsize
    if end > len(raw):
        raise TruncatedFileError(f"{path}: payload needs {end} bytes, file has {len(raw)}")
    data = np.frombuffer(raw[start:end], dtype=np_dtype).reshape(nz, ny, nx)

    # geometry: s-form wins, q-form next, plain pixdim last
    if sform_code > 0:
        srow = np.array(
            [
                struct.unpack_from(endian + "4f", raw, 280),
                struct.unpack_from(endian + "4f", raw, 296),
                struct.unpack_from(endian + "4f", raw, 312),
            ]
        )
        affine3 = srow[:, :3]  # columns: world step per (i=x, j=y, k=z) voxel index
        origin = srow[:, 3]
    elif qform_code > 0:
        b, c, d = struct.unpack_from(endian + "3f", raw, 256)
        origin = np.array(struct.unpack_from(endian + "3f", raw, 268))
        rot = _quaternion_matrix(b, c, d, pixdim[0])
        affine3 = rot * np.array([pixdim[1], pixdim[2], pixdim[3]])[None, :]
    else:
        affine3 = np.diag([pixdim[1], pixdim[2], pixdim[3]])
        origin = np.zeros(3)

    col_norms = np.linalg.norm(affine3, axis=0)
    if np.any(col_norms <= 0):
        raise NiftiError(f"{path}: degenerate orientation (zero-length axis)")
    # our axes are (D,H,W) = voxel (k,j,i); world components flip to (z,y,x)
    spacing = np.array([col_norms[2], col_norms[1], col_norms[0]])
    direction = np.stack(
        [
            affine3[::-1, 2] / col_norms[2],
            affine3[::-1, 1] / col_norms[1],
            affine3[::-1, 0] / col_norms[0],
        ],
        axis=1,
    )
    origin = np.asarray(origin, dtype=np.float64)[::-1]

    subject_id = Path(path).name.split(".")[0]
    integer_binary = datatype in (2, 4) and bool(np.all(np.isin(np.unique(data), (0, 1))))
    if as_label is None:
        as_label = integer_binary
    if as_label:
        return LabelVolume(np.ascontiguousarray(data), spacing, direction, origin, subject_id)

    vox = np.ascontiguousarray(data).astype(np.float32)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        if scl_slope != 0.0:
            vox = vox * scl_slope + scl_inter
    return Volume(vox, spacing, direction, origin, subject_id)


def write_nifti(vol, path) -> None:
    """Write a Volume (float32) or LabelVolume (uint8) as single-file NIfTI-1."""
    voxels = vol.voxels
    code = _DTYPE_CODES[voxels.dtype]
    d, h, w = voxels.shape

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, w, h, d, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, code)
    struct.pack_into("<h", header, 72, voxels.dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, vol.spacing[2], vol.spacing[1], vol.spacing[0], 0, 0, 0, 0)
    struct.pack_into("<f", header, 108, 352.0)
    struct.pack_into("<2f", header, 112, 1.0, 0.0)
    struct.pack_into("<2h", header, 252, 0, 1)  # qform off, sform on
    # columns back to voxel (i,j,k) order, world components back to (x,y,z)
    affine3 = np.stack(
        [
            vol.direction[::-1, 2] * vol.spacing[2],
            vol.direction[::-1, 1] * vol.spacing[1],
            vol.direction[::-1, 0] * vol.spacing[0],
        ],
        axis=1,
    )
    origin_xyz = vol.origin[::-1]
    struct.pack_into("<4f", header, 280, *affine3[0], origin_xyz[0])
    struct.pack_into("<4f", header, 296, *affine3[1], origin_xyz[1])
    struct.pack_into("<4f", header, 312, *affine3[2], origin_xyz[2])
    header[344:348] = b"n+1\x00"

    payload = bytes(header) + b"\x00" * 4 + np.ascontiguousarray(voxels).tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime keeps writes byte-reproducible
        path.write_bytes(gzip.compress(payload, mtime=0))
    else:
        path.write_bytes(payload)
