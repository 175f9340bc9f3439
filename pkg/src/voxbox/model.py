"""The full segmentation network: frozen encoder, depth embedding, decoder."""

from __future__ import annotations

import numpy as np

from .decoder import DecoderConfig, DecoderParams, decode, parameter_count
from .encoder import EncoderConfig, add_depth_embedding, build_encoder, init_depth_table
from .tensor import Tensor, no_grad

__all__ = ["SegModel"]


class SegModel:
    """Everything trainable lives in ``parameters()``; the encoder never does."""

    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
                 depth_embedding: bool = True, multi_scale: bool = True,
                 dtype=np.float32, param_seed: int = 0):
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.depth_embedding = depth_embedding
        self.multi_scale = multi_scale
        self.dtype = np.dtype(dtype)
        self.encoder = build_encoder(enc_cfg, self.dtype)
        self.depth_table = init_depth_table(enc_cfg, self.dtype)
        rng = np.random.default_rng(param_seed)
        self.decoder = DecoderParams(enc_cfg.d_emb, dec_cfg, multi_scale=multi_scale,
                                     dtype=self.dtype, rng=rng)

    def parameters(self) -> dict[str, Tensor]:
        out = {"depth_embedding.table": self.depth_table}
        for name, t in self.decoder.params.items():
            out[f"decoder.{name}"] = t
        return out

    def parameter_count(self) -> int:
        return parameter_count(self.parameters())

    def forward_subcube(self, x: np.ndarray, meta=None, mode: str = "tracked") -> Tensor:
        """unbox -> encode -> box -> depth-embed -> decode.

        In suspended mode the tape grows by zero nodes; tracked and
        suspended forwards of the same input are bit-identical.
        """
        if mode not in ("tracked", "suspended"):
            raise ValueError(f"unknown forward mode {mode!r}")
        x = np.asarray(x, dtype=self.dtype)
        if mode == "suspended":
            with no_grad():
                return self._forward(x, meta)
        return self._forward(x, meta)

    def _forward(self, x: np.ndarray, meta) -> Tensor:
        pyr = self.encoder.encode_subvolume(x, meta)
        levels = add_depth_embedding(pyr.levels, self.depth_table, self.depth_embedding)
        return decode(levels, pyr.source_extents, self.decoder, self.multi_scale)

    def zero_grads(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"checkpoint/config mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"checkpoint/config mismatch: {name} is {arr.shape}, model wants {t.data.shape}")
            t.data = arr
