"""VXF1 feature-file writer.

Byte layout (integers little-endian), shared contract with the training
engine's reader:
  magic "VXF1"
  u16 subject id length + utf-8
  u16 encoder tag length + utf-8
  u8 level count (4)
  per level: u32 d_emb, u32 D, u32 Gh, u32 Gw, float32 payload
  u64 blake2b-8 checksum of everything before it
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VXF1"


def write_vxf(levels: list[np.ndarray], subject_id: str, tag: str, path) -> None:
    """levels: four arrays shaped (d_emb, D, Gh, Gw), stored as float32."""
    if len(levels) != 4:
        raise ValueError(f"need 4 levels, got {len(levels)}")
    if len({lv.shape for lv in levels}) != 1:
        raise ValueError("levels disagree on extents")
    sid = subject_id.encode()
    tg = tag.encode()
    parts = [MAGIC, struct.pack("<H", len(sid)), sid, struct.pack("<H", len(tg)), tg,
             struct.pack("<B", 4)]
    for lv in levels:
        c, d, gh, gw = lv.shape
        parts.append(struct.pack("<4I", c, d, gh, gw))
        parts.append(np.ascontiguousarray(lv, dtype="<f4").tobytes())
    body = b"".join(parts)
    checksum = int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")
    Path(path).write_bytes(body + struct.pack("<Q", checksum))
