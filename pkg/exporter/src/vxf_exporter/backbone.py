"""Slice encoders: the pretrained DINOv3 ViT-Base, or a deterministic stub.

Both expose encode_slices(images) -> list of four (d_emb, G, G) grids per
image, with class/register tokens already dropped. The stub reproduces the
ViT-Base geometry (768 channels, 12 blocks, patch 16, one class token and
four registers) from seeded weights, so the full export pipeline and file
contract can be exercised without downloading weights.
"""

from __future__ import annotations

import numpy as np


def _layernorm(x, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(x):
    c = float(np.sqrt(2.0 / np.pi))
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def _resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape
    if (h, w) == (size, size):
        return img.copy()

    def matrix(n_in, n_out):
        m = np.zeros((n_out, n_in), dtype=img.dtype)
        if n_in == 1:
            m[:, 0] = 1
            return m
        for i in range(n_out):
            src = (i + 0.5) * n_in / n_out - 0.5
            j = min(max(int(np.floor(src)), 0), n_in - 2)
            t = src - j
            m[i, j] = 1 - t
            m[i, j + 1] = t
        return m

    return matrix(h, size) @ img @ matrix(w, size).T


class StubViTBase:
    """Frozen random ViT with the exact ViT-Base interface geometry."""

    D_EMB = 768
    BLOCKS = 12
    HEADS = 12
    REGISTERS = 4
    MLP_RATIO = 4

    def __init__(self, native_size: int = 224, patch_size: int = 16, seed: int = 0):
        if native_size % patch_size:
            raise ValueError("native size must be divisible by the patch size")
        self.native_size = native_size
        self.patch_size = patch_size
        self.grid = native_size // patch_size
        rng = np.random.default_rng(seed)
        d = self.D_EMB
        hid = d * self.MLP_RATIO

        def w(std, *shape):
            return rng.normal(0, std, size=shape).astype(np.float32)

        pdim = patch_size * patch_size * 3
        self.patch_w = w(1.0 / np.sqrt(pdim), pdim, d)
        self.patch_b = w(0.02, d)
        self.specials = w(0.02, 1 + self.REGISTERS, d)  # class token + registers
        self.pos = w(0.02, self.grid * self.grid, d)
        self.blocks = []
        for _ in range(self.BLOCKS):
            self.blocks.append({
                "qkv_w": w(1.0 / np.sqrt(d), d, 3 * d),
                "qkv_b": w(0.02, 3 * d),
                "proj_w": w(1.0 / np.sqrt(d), d, d),
                "proj_b": w(0.02, d),
                "mlp_w1": w(1.0 / np.sqrt(d), d, hid),
                "mlp_b1": w(0.02, hid),
                "mlp_w2": w(1.0 / np.sqrt(hid), hid, d),
                "mlp_b2": w(0.02, d),
            })

    @property
    def model_tag(self) -> str:
        return f"stub-vitb;S={self.native_size};p={self.patch_size};registers={self.REGISTERS}"

    def max_layer(self) -> int:
        return self.BLOCKS

    def _attn(self, x, blk):
        t, d = x.shape
        h = self.HEADS
        dh = d // h
        qkv = x @ blk["qkv_w"] + blk["qkv_b"]
        q, k, v = (m.reshape(t, h, dh).transpose(1, 0, 2) for m in np.split(qkv, 3, axis=1))
        attn = _softmax((q @ k.transpose(0, 2, 1)) / np.float32(np.sqrt(dh)))
        out = (attn @ v).transpose(1, 0, 2).reshape(t, d)
        return out @ blk["proj_w"] + blk["proj_b"]

    def encode_slices(self, images: list[np.ndarray], tap_layers) -> list[list[np.ndarray]]:
        g, p = self.grid, self.patch_size
        want = set(tap_layers)
        out = []
        for img in images:
            resized = _resize_bilinear(np.asarray(img, dtype=np.float32), self.native_size)
            rgb = np.repeat(resized[..., None], 3, axis=-1)
            patches = rgb.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, -1)
            tokens = patches @ self.patch_w + self.patch_b + self.pos
            x = np.concatenate([self.specials, tokens], axis=0)
            taps = []
            for i, blk in enumerate(self.blocks, start=1):
                x = x + self._attn(_layernorm(x), blk)
                xn = _layernorm(x)
                x = x + _gelu(xn @ blk["mlp_w1"] + blk["mlp_b1"]) @ blk["mlp_w2"] + blk["mlp_b2"]
                if i in want:
                    grid = x[1 + self.REGISTERS :].reshape(g, g, self.D_EMB).transpose(2, 0, 1)
                    taps.append(np.ascontiguousarray(grid))
            out.append(taps)
        return out


class Dinov3Backbone:
    """The real pretrained encoder, loaded lazily through torch.

    Needs network access (or a local cache) for the weights; everything
    format-level is identical to the stub path.
    """

    def __init__(self, model_id: str = "facebook/dinov3-vitb16-pretrain-lvd1689m",
                 native_size: int = 224, patch_size: int = 16):
        try:
            import torch  # noqa: F401
        except ImportError as exc:
            raise RuntimeError("the dinov3 backbone needs torch; pip install vxf-exporter[dinov3]") from exc
        self.model_id = model_id
        self.native_size = native_size
        self.patch_size = patch_size
        self.grid = native_size // patch_size
        self._model = None
        self._registers = None

    def _load(self):
        if self._model is not None:
            return
        import torch

        try:
            from transformers import AutoModel

            self._model = AutoModel.from_pretrained(self.model_id)
        except Exception as exc:
            raise RuntimeError(
                f"could not obtain pretrained weights for {self.model_id!r}: {exc}. "
                "Download requires network access or a populated local cache."
            ) from exc
        self._model.eval()
        torch.set_grad_enabled(False)

    @property
    def model_tag(self) -> str:
        regs = self._registers if self._registers is not None else "?"
        return f"{self.model_id};S={self.native_size};p={self.patch_size};registers={regs}"

    def max_layer(self) -> int:
        self._load()
        return self._model.config.num_hidden_layers

    def encode_slices(self, images: list[np.ndarray], tap_layers) -> list[list[np.ndarray]]:
        import torch

        self._load()
        g = self.grid
        out = []
        for img in images:
            resized = _resize_bilinear(np.asarray(img, dtype=np.float32), self.native_size)
            rgb = np.repeat(resized[None, None], 3, axis=1)
            with torch.no_grad():
                res = self._model(torch.from_numpy(rgb.copy()), output_hidden_states=True)
            taps = []
            for layer in tap_layers:
                tokens = res.hidden_states[layer][0].numpy()
                specials = tokens.shape[0] - g * g  # class + registers, release-dependent
                if self._registers is None:
                    self._registers = specials - 1
                grid = tokens[specials:].reshape(g, g, -1).transpose(2, 0, 1)
                taps.append(np.ascontiguousarray(grid.astype(np.float32)))
            out.append(taps)
        return out


def build_backbone(kind: str, model_id: str, native_size: int, patch_size: int, seed: int = 0):
    if kind == "stub":
        return StubViTBase(native_size, patch_size, seed=seed)
    if kind == "dinov3":
        return Dinov3Backbone(model_id, native_size, patch_size)
    raise ValueError(f"unknown backbone {kind!r} (expected 'stub' or 'dinov3')")
