"""VXF1 encoder-feature files.

Layout, all integers little-endian:
  magic "VXF1"
  u16 subject_id length + utf-8 bytes
  u16 encoder tag length + utf-8 bytes
  u8 level count (must be 4)
  per level: u32 d_emb, u32 D, u32 Gh, u32 Gw, then float32 payload
  u64 checksum (blake2b-8) of every preceding byte

Payloads are float32 regardless of the training dtype.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["FeaturePyramid", "FeatureFileError", "write_feature_file", "read_feature_file"]

MAGIC = b"VXF1"
LEVEL_COUNT = 4


class FeatureFileError(ValueError):
    pass


@dataclass
class FeaturePyramid:
    """Four boxed feature volumes, each (1, d_emb, D, Gh, Gw)."""

    levels: list[np.ndarray]
    source_extents: tuple[int, int, int]  # (D, H, W) of the originating sub-volume
    subject_id: str = ""
    encoder_tag: str = ""

    def __post_init__(self):
        if len(self.levels) != LEVEL_COUNT:
            raise FeatureFileError(f"feature pyramid needs {LEVEL_COUNT} levels, got {len(self.levels)}")
        shapes = {lv.shape for lv in self.levels}
        if len(shapes) != 1:
            raise FeatureFileError(f"feature levels disagree on extents: {sorted(shapes)}")
        shape = self.levels[0].shape
        if len(shape) != 5 or shape[0] != 1:
            raise FeatureFileError(f"feature levels must be (1, C, D, Gh, Gw), got {shape}")

    @property
    def level_extents(self):
        return self.levels[0].shape

    @property
    def depth(self) -> int:
        return self.levels[0].shape[2]


def _checksum(buf: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(buf, digest_size=8).digest(), "little")


def write_feature_file(pyramid: FeaturePyramid, path) -> None:
    sid = pyramid.subject_id.encode()
    tag = pyramid.encoder_tag.encode()
    parts = [MAGIC, struct.pack("<H", len(sid)), sid, struct.pack("<H", len(tag)), tag,
             struct.pack("<B", LEVEL_COUNT)]
    for lv in pyramid.levels:
        c, d, gh, gw = lv.shape[1:]
        parts.append(struct.pack("<4I", c, d, gh, gw))
        parts.append(np.ascontiguousarray(lv[0], dtype="<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<Q", _checksum(body)))


def read_feature_file(path) -> FeaturePyramid:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 2 + 2 + 1 + 8:
        raise FeatureFileError(f"{path}: too short to be a feature file")
    if raw[:4] != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {raw[:4]!r}")
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if _checksum(body) != stored:
        raise FeatureFileError(f"{path}: checksum mismatch, file is corrupt")

    off = 4
    (sid_len,) = struct.unpack_from("<H", body, off)
    off += 2
    subject_id = body[off : off + sid_len].decode()
    off += sid_len
    (tag_len,) = struct.unpack_from("<H", body, off)
    off += 2
    tag = body[off : off + tag_len].decode()
    off += tag_len
    (count,) = struct.unpack_from("<B", body, off)
    off += 1
    if count != LEVEL_COUNT:
        raise FeatureFileError(f"{path}: level count {count} != {LEVEL_COUNT}")

    levels = []
    for _ in range(count):
        c, d, gh, gw = struct.unpack_from("<4I", body, off)
        off += 16
        n = c * d * gh * gw
        end = off + 4 * n
        if end > len(body):
            raise FeatureFileError(f"{path}: truncated level payload")
        arr = np.frombuffer(body[off:end], dtype="<f4").reshape(c, d, gh, gw).astype(np.float32)
        levels.append(arr[None])
        off += 4 * n
    if off != len(body):
        raise FeatureFileError(f"{path}: {len(body) - off} trailing bytes after levels")

    d = levels[0].shape[2]
    src = _source_extents_from_tag(tag, default=(d, 0, 0))
    return FeaturePyramid(levels, src, subject_id=subject_id, encoder_tag=tag)


def _source_extents_from_tag(tag: str, default):
    # the exporter records the preprocessed volume geometry as src=DxHxW
    for field in tag.split(";"):
        if field.startswith("src="):
            try:
                d, h, w = (int(v) for v in field[4:].split("x"))
                return (d, h, w)
            except ValueError:
                break
    return default
