"""Slice-wise encoding of sub-volumes through a frozen 2D backbone.

A sub-volume is unboxed into axial slices; each slice is resized to the
backbone's native resolution and encoded independently (no cross-slice
interaction), capturing token grids after four tap layers; the grids are
boxed back into four volumetric feature maps. Volumetric awareness is
restored by a trainable depth embedding added to every level.

The encoder itself never touches the tape: the first trainable node in a
forward pass is the depth-embedding addition.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import frozen_kernels, interp_matrix, resize_bilinear
from .tensor import Tensor, add, matmul, reshape
from .volio.features import FeaturePyramid, read_feature_file

__all__ = [
    "EncoderConfig",
    "unbox",
    "stack_slices",
    "box",
    "ToyEncoder",
    "ImportedEncoder",
    "build_encoder",
    "add_depth_embedding",
    "init_depth_table",
]


@dataclass(frozen=True)
class EncoderConfig:
    backend: str = "toy"  # "toy" or "imported"
    native_size: int = 224
    patch_size: int = 16
    d_emb: int = 64  # 768 for the real ViT-Base export
    tap_layers: tuple[int, int, int, int] = (1, 2, 3, 4)
    design_depth: int = 128
    # toy backbone knobs
    toy_blocks: int = 4
    toy_heads: int = 2
    toy_mlp_ratio: float = 2.0
    toy_seed: int = 0
    toy_positional: bool = True
    # imported backend source
    feature_dir: str | None = None

    def __post_init__(self):
        if self.native_size % self.patch_size != 0:
            raise ValueError(
                f"native size {self.native_size} must be divisible by patch size {self.patch_size}"
            )
        if len(self.tap_layers) != 4 or list(self.tap_layers) != sorted(set(self.tap_layers)):
            raise ValueError(f"need exactly four strictly increasing tap layers, got {self.tap_layers}")
        if self.backend not in ("toy", "imported"):
            raise ValueError(f"unknown encoder backend {self.backend!r}")
        if self.backend == "toy" and self.tap_layers[-1] > self.toy_blocks:
            raise ValueError(
                f"tap layer {self.tap_layers[-1]} exceeds the {self.toy_blocks}-block toy backbone"
            )

    @property
    def grid(self) -> int:
        return self.native_size // self.patch_size


# ---------------------------------------------------------------------------
# unboxing / boxing

def unbox(x: np.ndarray) -> list[np.ndarray]:
    """(1,1,d,h,w) sub-volume to d axial slices of (h,w)."""
    if x.ndim != 5 or x.shape[0] != 1 or x.shape[1] != 1:
        raise ValueError(f"unbox expects (1,1,d,h,w), got {x.shape}")
    return [x[0, 0, i] for i in range(x.shape[2])]


def stack_slices(slices: list[np.ndarray]) -> np.ndarray:
    """Inverse of unbox."""
    return np.stack(slices, axis=0)[None, None]


def box(per_slice_features: list[list[np.ndarray]], d: int) -> list[np.ndarray]:
    """Stack per-slice token grids depth-wise: level k becomes (1, C, d, G, G)."""
    if len(per_slice_features) != d:
        raise ValueError(f"box: got {len(per_slice_features)} slices, expected {d}")
    shapes = {f.shape for feats in per_slice_features for f in feats}
    if len({len(feats) for feats in per_slice_features}) != 1 or len(shapes) != 1:
        raise ValueError(f"box: inconsistent slice feature shapes {sorted(shapes)}")
    n_levels = len(per_slice_features[0])
    return [
        np.stack([per_slice_features[i][k] for i in range(d)], axis=1)[None]
        for k in range(n_levels)
    ]


# ---------------------------------------------------------------------------
# frozen toy backbone: a deterministic miniature ViT

class ToyEncoder:
    """Seeded frozen mini-ViT with a class token; taps after chosen blocks.

    Exists so the full pipeline runs without pretrained weights. It keeps
    the same interface as the real backbone: patch grid G = S/p per slice,
    class token dropped on output.
    """

    def __init__(self, cfg: EncoderConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.toy_seed)
        d = cfg.d_emb
        p = cfg.patch_size
        g = cfg.grid
        hid = int(d * cfg.toy_mlp_ratio)

        def w(std, *shape):
            # drawn in f64 for seed stability, stored in the working dtype
            return rng.normal(0, std, size=shape).astype(self.dtype)

        self.patch_w = w(1.0 / np.sqrt(p * p * 3), p * p * 3, d)
        self.patch_b = w(0.02, d)
        self.cls = w(0.02, 1, d)
        self.pos = w(0.02, g * g, d)
        self.blocks = []
        for _ in range(cfg.toy_blocks):
            self.blocks.append(
                {
                    "ln1_g": 1.0 + w(0.02, d),
                    "ln1_b": w(0.02, d),
                    "qkv_w": w(1.0 / np.sqrt(d), d, 3 * d),
                    "qkv_b": w(0.02, 3 * d),
                    "proj_w": w(1.0 / np.sqrt(d), d, d),
                    "proj_b": w(0.02, d),
                    "ln2_g": 1.0 + w(0.02, d),
                    "ln2_b": w(0.02, d),
                    "mlp_w1": w(1.0 / np.sqrt(d), d, hid),
                    "mlp_b1": w(0.02, hid),
                    "mlp_w2": w(1.0 / np.sqrt(hid), hid, d),
                    "mlp_b2": w(0.02, d),
                }
            )

    @property
    def tag(self) -> str:
        c = self.cfg
        return f"toy;S={c.native_size};p={c.patch_size};d={c.d_emb};B={c.toy_blocks};seed={c.toy_seed}"

    def _attention(self, x: np.ndarray, blk) -> np.ndarray:
        t, d = x.shape
        h = self.cfg.toy_heads
        dh = d // h
        qkv = x @ blk["qkv_w"] + blk["qkv_b"]
        q, k, v = (m.reshape(t, h, dh).transpose(1, 0, 2) for m in np.split(qkv, 3, axis=1))
        scores = (q @ k.transpose(0, 2, 1)) / x.dtype.type(np.sqrt(dh))
        attn = frozen_kernels("softmax", scores)
        out = (attn @ v).transpose(1, 0, 2).reshape(t, d)
        return out @ blk["proj_w"] + blk["proj_b"]

    def encode_slice(self, slice2d: np.ndarray) -> list[np.ndarray]:
        """One (h,w) slice to four (d_emb, G, G) token grids."""
        cfg = self.cfg
        s, p, g = cfg.native_size, cfg.patch_size, cfg.grid
        img = resize_bilinear(np.asarray(slice2d, dtype=self.dtype), (s, s))
        rgb = np.repeat(img[..., None], 3, axis=-1)  # replicate gray to 3 channels
        patches = rgb.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * 3)
        tokens = patches @ self.patch_w + self.patch_b
        if cfg.toy_positional:
            tokens = tokens + self.pos
        x = np.concatenate([self.cls, tokens], axis=0)

        taps = []
        want = set(cfg.tap_layers)
        for i, blk in enumerate(self.blocks, start=1):
            xn = frozen_kernels("layernorm", x) * blk["ln1_g"] + blk["ln1_b"]
            x = x + self._attention(xn, blk)
            xn = frozen_kernels("layernorm", x) * blk["ln2_g"] + blk["ln2_b"]
            hidden = frozen_kernels("gelu", xn @ blk["mlp_w1"] + blk["mlp_b1"])
            x = x + hidden @ blk["mlp_w2"] + blk["mlp_b2"]
            if i in want:
                grid = x[1:].reshape(g, g, cfg.d_emb).transpose(2, 0, 1)  # class token dropped
                taps.append(np.ascontiguousarray(grid))
        return taps

    def encode_subvolume(self, x: np.ndarray, meta=None) -> FeaturePyramid:
        slices = unbox(np.asarray(x, dtype=self.dtype))
        feats = [self.encode_slice(s) for s in slices]
        levels = box(feats, len(slices))
        return FeaturePyramid(levels, tuple(x.shape[2:]), encoder_tag=self.tag)


# ---------------------------------------------------------------------------
# imported backend: precomputed features from the offline exporter

class ImportedEncoder:
    """Serves boxed features from VXF1 files, keyed by subject id.

    Files hold full-volume-depth features of full slices, so sub-volumes
    may window the depth axis but must keep the source in-plane extents
    (features of a cropped-then-resized slice are not derivable from the
    full slice's token grid).
    """

    # full-depth ViT-Base features run ~300 MB per subject, and training
    # touches one subject's cubes consecutively: a two-entry cache is enough
    CACHE_SUBJECTS = 2

    def __init__(self, cfg: EncoderConfig, dtype=np.float32):
        if not cfg.feature_dir:
            raise ValueError("imported encoder backend needs feature_dir")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.dir = Path(cfg.feature_dir)
        self._cache: dict[str, FeaturePyramid] = {}

    def _load(self, subject_id: str) -> FeaturePyramid:
        if subject_id not in self._cache:
            path = self.dir / f"{subject_id}.vxf"
            if not path.exists():
                raise FileNotFoundError(f"no feature file for subject {subject_id!r} under {self.dir}")
            while len(self._cache) >= self.CACHE_SUBJECTS:
                self._cache.pop(next(iter(self._cache)))
            self._cache[subject_id] = read_feature_file(path)
        return self._cache[subject_id]

    def encode_subvolume(self, x: np.ndarray, meta=None) -> FeaturePyramid:
        if not meta or "subject_id" not in meta:
            raise ValueError("imported backend needs meta={'subject_id', 'z_offset'}")
        pyr = self._load(meta["subject_id"])
        d, h, w = x.shape[2:]
        z0 = int(meta.get("z_offset", 0))
        src_d, src_h, src_w = pyr.source_extents
        if (src_h, src_w) != (0, 0) and (h, w) != (src_h, src_w):
            raise ValueError(
                f"imported features cover full {src_h}x{src_w} slices; sub-volume is {h}x{w}. "
                "Partition the depth axis only, or use the toy backend."
            )
        if z0 + d > pyr.depth:
            raise ValueError(
                f"subject {meta['subject_id']!r}: depth window [{z0},{z0 + d}) exceeds stored depth {pyr.depth}"
            )
        levels = [np.ascontiguousarray(lv[:, :, z0 : z0 + d]).astype(self.dtype) for lv in pyr.levels]
        return FeaturePyramid(levels, (d, h, w), subject_id=meta["subject_id"], encoder_tag=pyr.encoder_tag)


def build_encoder(cfg: EncoderConfig, dtype=np.float32):
    if cfg.backend == "toy":
        return ToyEncoder(cfg, dtype)
    return ImportedEncoder(cfg, dtype)


# ---------------------------------------------------------------------------
# depth embedding

def init_depth_table(cfg: EncoderConfig, dtype=np.float32) -> Tensor:
    """Zero-initialized (d_emb, design_depth) table: identity at init."""
    return Tensor(np.zeros((cfg.d_emb, cfg.design_depth), dtype=dtype), requires_grad=True)


def add_depth_embedding(levels: list[np.ndarray], table: Tensor, enabled: bool = True) -> list[Tensor]:
    """Add the (interpolated) depth embedding to every level.

    The table is linearly interpolated from the design depth to the
    sub-volume depth (exact identity when they match) and broadcast over
    the in-plane grid. With enabled=False the inputs pass through
    untouched, giving the ablation arm bit-identical features.
    """
    if not enabled:
        return [Tensor(lv) for lv in levels]
    d = levels[0].shape[2]
    design = table.data.shape[1]
    w = interp_matrix(design, d, table.data.dtype).T  # (design, d)
    emb = matmul(table, Tensor(w))  # (d_emb, d)
    emb = reshape(emb, (1, table.data.shape[0], d, 1, 1))
    return [add(Tensor(lv), emb) for lv in levels]
