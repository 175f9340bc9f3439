"""Run-config serialization and model construction."""

import numpy as np
import pytest

from conftest import tiny_model
from voxbox.config import (
    RunConfig,
    build_model,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
)


class TestRoundTrip:
    def test_default_round_trips(self):
        cfg = RunConfig()
        again = run_config_from_dict(run_config_to_dict(cfg))
        assert again == cfg

    def test_sample_configs_load(self):
        full = load_run_config("configs/default.json")
        assert full.model.encoder.d_emb == 768
        assert full.model.decoder.c_head == 352
        assert full.train.epochs == 100
        toy = load_run_config("configs/toy.json")
        assert toy.model.encoder.backend == "toy"

    def test_unknown_key_rejected_with_section(self):
        with pytest.raises(ValueError, match="model.encoder"):
            run_config_from_dict({"model": {"encoder": {"native_siez": 224}}})

    def test_unknown_top_level_rejected(self):
        with pytest.raises(ValueError, match="top-level"):
            run_config_from_dict({"trian": {}})

    def test_lists_become_tuples(self):
        cfg = run_config_from_dict({"train": {"cube_extents": [8, 8, 8]}})
        assert cfg.train.cube_extents == (8, 8, 8)

    def test_bad_dtype_rejected(self):
        with pytest.raises(ValueError, match="dtype"):
            run_config_from_dict({"model": {"dtype": "f16"}})


class TestBuildModel:
    def test_ablation_switches_threaded(self):
        doc = {
            "model": {"encoder": {"backend": "toy", "native_size": 8, "patch_size": 4,
                                  "d_emb": 8, "tap_layers": [1, 2, 3, 4], "design_depth": 8},
                      "decoder": {"c_proj": 4, "c_ref": 4, "c_head": 4}},
            "train": {"depth_embedding": False, "multi_scale": False},
        }
        model = build_model(run_config_from_dict(doc))
        assert model.depth_embedding is False
        assert model.multi_scale is False
        assert model.decoder.multi_scale is False

    def test_dtype_applied(self):
        doc = {"model": {"encoder": {"backend": "toy", "native_size": 8, "patch_size": 4,
                                     "d_emb": 8, "tap_layers": [1, 2, 3, 4], "design_depth": 8},
                         "decoder": {"c_proj": 4, "c_ref": 4, "c_head": 4},
                         "dtype": "f64"}}
        model = build_model(run_config_from_dict(doc))
        assert model.dtype == np.float64
        assert model.depth_table.data.dtype == np.float64


class TestStateDict:
    def test_round_trip(self):
        m1 = tiny_model(seed=1)
        m2 = tiny_model(seed=2)
        m2.load_state(m1.state_dict())
        for a, b in zip(m1.parameters().values(), m2.parameters().values()):
            assert np.array_equal(a.data, b.data)

    def test_mismatched_names_rejected(self):
        m = tiny_model()
        state = m.state_dict()
        state["decoder.ghost.w"] = np.zeros(3)
        with pytest.raises(ValueError, match="mismatch"):
            m.load_state(state)

    def test_mismatched_shape_rejected(self):
        m = tiny_model()
        state = m.state_dict()
        state["decoder.final.b"] = np.zeros(7)
        with pytest.raises(ValueError, match="final.b"):
            m.load_state(state)

    def test_parameter_count_reported_at_construction(self):
        m = tiny_model()
        assert m.decoder.parameter_count == sum(
            t.data.size for n, t in m.parameters().items() if n.startswith("decoder.")
        )
        assert m.parameter_count() == m.decoder.parameter_count + m.depth_table.data.size
