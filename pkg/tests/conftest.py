import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from voxbox.decoder import DecoderConfig
from voxbox.encoder import EncoderConfig
from voxbox.model import SegModel
from voxbox.tensor import tape


@pytest.fixture(autouse=True)
def clean_tape():
    tape().clear()
    yield
    tape().clear()


def tiny_encoder_config(**kw) -> EncoderConfig:
    base = dict(
        backend="toy",
        native_size=8,
        patch_size=4,
        d_emb=8,
        tap_layers=(1, 2, 3, 4),
        design_depth=16,
        toy_blocks=4,
        toy_heads=2,
    )
    base.update(kw)
    return EncoderConfig(**base)


def tiny_model(dtype=np.float64, seed=3, **kw) -> SegModel:
    enc = tiny_encoder_config(**kw.pop("encoder", {}))
    dec = DecoderConfig(c_proj=4, c_ref=4, c_head=4)
    return SegModel(enc, dec, dtype=dtype, param_seed=seed, **kw)


def sphere_phantom(extent: int, radius: float, center=None, noise=0.05, seed=0):
    """Synthetic scan: a bright ball on a dim background, plus its mask."""
    rng = np.random.default_rng(seed)
    c = np.asarray(center if center is not None else [(extent - 1) / 2] * 3)
    zz, yy, xx = np.meshgrid(*(np.arange(extent),) * 3, indexing="ij")
    dist = np.sqrt((zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2)
    mask = (dist <= radius).astype(np.uint8)
    img = 0.2 + 0.8 * mask + noise * rng.normal(size=mask.shape)
    return img.astype(np.float32), mask
