"""Run configuration: one JSON document with model/preprocess/train sections.

Unknown keys are rejected so config typos fail loudly. Every run writes its
resolved snapshot next to its outputs; re-running from the snapshot
reproduces the run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .losses import LossConfig
from .model import SegModel
from .preprocess import PreprocessConfig
from .trainer import TrainConfig

__all__ = ["ModelConfig", "RunConfig", "load_run_config", "save_run_config", "build_model"]

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    dtype: str = "f32"
    param_seed: int = 0

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_TUPLE_FIELDS = {
    "tap_layers",
    "cube_extents",
    "clip_percentiles",
    "crop_extent",
    "target_spacing",
}


def _build_dc(cls, data: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"config: unknown key(s) {sorted(unknown)} in section '{path}'")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def run_config_from_dict(doc: dict) -> RunConfig:
    unknown = set(doc) - {"model", "preprocess", "train"}
    if unknown:
        raise ValueError(f"config: unknown top-level section(s) {sorted(unknown)}")
    model_doc = dict(doc.get("model", {}))
    enc = _build_dc(EncoderConfig, dict(model_doc.pop("encoder", {})), "model.encoder")
    dec = _build_dc(DecoderConfig, dict(model_doc.pop("decoder", {})), "model.decoder")
    model = _build_dc(ModelConfig, {**model_doc, "encoder": enc, "decoder": dec}, "model")
    pre = _build_dc(PreprocessConfig, dict(doc.get("preprocess", {})), "preprocess")
    train_doc = dict(doc.get("train", {}))
    loss = _build_dc(LossConfig, dict(train_doc.pop("loss", {})), "train.loss")
    train = _build_dc(TrainConfig, {**train_doc, "loss": loss}, "train")
    return RunConfig(model, pre, train)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(json.loads(Path(path).read_text()))


def save_run_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(run_config_to_dict(cfg), indent=2) + "\n")


def build_model(cfg: RunConfig) -> SegModel:
    return SegModel(
        cfg.model.encoder,
        cfg.model.decoder,
        depth_embedding=cfg.train.depth_embedding,
        multi_scale=cfg.train.multi_scale,
        dtype=cfg.model.np_dtype,
        param_seed=cfg.model.param_seed,
    )
