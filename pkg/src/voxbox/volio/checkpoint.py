"""Parameter checkpoints: named tensor blobs in one file.

File = magic "VXT1", u8 container version, u32 entry count, then per entry
a u16 name length, utf-8 name, and one self-describing tensor blob in the
same VXT1 layout (dtype code u8, rank u8, u64 extents, raw data).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..tensor import read_tensor_blob, write_tensor_blob

__all__ = ["write_checkpoint", "read_checkpoint"]

_MAGIC = b"VXT1"
_VERSION = 1


def write_checkpoint(params: dict[str, np.ndarray], path) -> None:
    parts = [_MAGIC, struct.pack("<BI", _VERSION, len(params))]
    for name, arr in params.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(write_tensor_blob(np.asarray(arr)))
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (magic {raw[:4]!r})")
    version, count = struct.unpack_from("<BI", raw, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode()
        off += nlen
        arr, off = read_tensor_blob(raw, off)
        out[name] = arr
    return out
