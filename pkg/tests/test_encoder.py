"""Slice-wise encoding, boxing, and the depth embedding."""

import numpy as np
import pytest

from conftest import tiny_encoder_config
from oracles import check_grad
from voxbox.encoder import (
    EncoderConfig,
    ImportedEncoder,
    ToyEncoder,
    add_depth_embedding,
    box,
    init_depth_table,
    stack_slices,
    unbox,
)
from voxbox.tensor import Tensor, backward, tape, tsum
from voxbox.volio.features import FeaturePyramid, write_feature_file


class TestConfig:
    def test_native_size_divisible_by_patch(self):
        with pytest.raises(ValueError, match="divisible"):
            EncoderConfig(native_size=10, patch_size=4)

    def test_exactly_four_increasing_taps(self):
        with pytest.raises(ValueError, match="tap layers"):
            EncoderConfig(tap_layers=(1, 2, 3))
        with pytest.raises(ValueError, match="tap layers"):
            EncoderConfig(tap_layers=(1, 3, 2, 4))

    def test_taps_within_toy_depth(self):
        with pytest.raises(ValueError, match="exceeds"):
            EncoderConfig(tap_layers=(1, 2, 3, 9), toy_blocks=4)


class TestUnboxBox:
    def test_unbox_shapes(self):
        x = np.random.default_rng(0).normal(size=(1, 1, 4, 8, 8))
        slices = unbox(x)
        assert len(slices) == 4
        assert all(s.shape == (8, 8) for s in slices)
        assert np.array_equal(slices[2], x[0, 0, 2])

    def test_stack_inverts_unbox(self):
        x = np.random.default_rng(1).normal(size=(1, 1, 5, 6, 7))
        assert np.array_equal(stack_slices(unbox(x)), x)

    def test_single_slice(self):
        x = np.zeros((1, 1, 1, 4, 4))
        assert len(unbox(x)) == 1

    def test_box_stacks_depthwise(self):
        rng = np.random.default_rng(2)
        d = 3
        feats = [[rng.normal(size=(5, 2, 2)) for _ in range(4)] for _ in range(d)]
        levels = box(feats, d)
        assert len(levels) == 4
        assert levels[0].shape == (1, 5, 3, 2, 2)
        # voxel (c, i, g1, g2) of level k equals slice i's tap-k feature
        for k in range(4):
            for i in range(d):
                assert np.array_equal(levels[k][0, :, i], feats[i][k])

    def test_box_permutation_permutes_depth(self):
        rng = np.random.default_rng(3)
        feats = [[rng.normal(size=(4, 2, 2)) for _ in range(4)] for _ in range(3)]
        fwd = box(feats, 3)
        rev = box(feats[::-1], 3)
        assert np.array_equal(rev[0][0, :, ::-1], fwd[0][0])

    def test_box_rejects_inconsistent_shapes(self):
        rng = np.random.default_rng(4)
        feats = [[rng.normal(size=(4, 2, 2))] * 4, [rng.normal(size=(4, 3, 3))] * 4]
        with pytest.raises(ValueError, match="inconsistent"):
            box(feats, 2)


class TestToyEncoder:
    def test_deterministic_per_slice(self):
        enc = ToyEncoder(tiny_encoder_config())
        s = np.random.default_rng(5).normal(size=(12, 12)).astype(np.float32)
        a = enc.encode_slice(s)
        b = enc.encode_slice(s)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta, tb)

    def test_tap_shapes(self):
        cfg = tiny_encoder_config()
        enc = ToyEncoder(cfg)
        taps = enc.encode_slice(np.zeros((10, 10), dtype=np.float32))
        g = cfg.native_size // cfg.patch_size
        assert len(taps) == 4
        assert all(t.shape == (cfg.d_emb, g, g) for t in taps)

    def test_constant_slice_constant_tokens_without_positional(self):
        enc = ToyEncoder(tiny_encoder_config(toy_positional=False))
        taps = enc.encode_slice(np.full((8, 8), 0.37, dtype=np.float32))
        for t in taps:
            flat = t.reshape(t.shape[0], -1)
            assert np.allclose(flat, flat[:, :1], atol=1e-6)

    def test_positional_breaks_constancy(self):
        enc = ToyEncoder(tiny_encoder_config(toy_positional=True))
        t1 = enc.encode_slice(np.full((8, 8), 0.37, dtype=np.float32))[0]
        flat = t1.reshape(t1.shape[0], -1)
        assert not np.allclose(flat, flat[:, :1], atol=1e-6)

    def test_slice_independence(self):
        enc = ToyEncoder(tiny_encoder_config(), dtype=np.float64)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 1, 4, 8, 8))
        base = enc.encode_subvolume(x)
        x2 = x.copy()
        x2[0, 0, 2] = 0.0
        mod = enc.encode_subvolume(x2)
        for lv_a, lv_b in zip(base.levels, mod.levels):
            diff = np.abs(lv_a - lv_b).reshape(lv_a.shape[1], lv_a.shape[2], -1).max(axis=(0, 2))
            assert diff[2] > 0
            assert np.all(diff[[0, 1, 3]] == 0)

    def test_pyramid_source_extents(self):
        enc = ToyEncoder(tiny_encoder_config())
        pyr = enc.encode_subvolume(np.zeros((1, 1, 3, 9, 11), dtype=np.float32))
        assert pyr.source_extents == (3, 9, 11)
        assert pyr.depth == 3


class TestDepthEmbedding:
    def test_identity_interpolation_at_design_depth(self):
        cfg = tiny_encoder_config(design_depth=5)
        table = init_depth_table(cfg, np.float64)
        table.data = np.random.default_rng(7).normal(size=table.data.shape)
        rng = np.random.default_rng(8)
        levels = [rng.normal(size=(1, cfg.d_emb, 5, 2, 2)) for _ in range(4)]
        out = add_depth_embedding(levels, table, enabled=True)
        for lv, o in zip(levels, out):
            assert np.array_equal(o.data, lv + table.data[None, :, :, None, None])

    def test_zero_table_is_identity(self):
        cfg = tiny_encoder_config(design_depth=6)
        table = init_depth_table(cfg, np.float64)
        rng = np.random.default_rng(9)
        levels = [rng.normal(size=(1, cfg.d_emb, 3, 2, 2)) for _ in range(4)]
        out = add_depth_embedding(levels, table, enabled=True)
        for lv, o in zip(levels, out):
            assert np.array_equal(o.data, lv)

    def test_disabled_reproduces_input_bit_exactly_off_tape(self):
        cfg = tiny_encoder_config()
        table = init_depth_table(cfg, np.float64)
        table.data = np.random.default_rng(10).normal(size=table.data.shape)
        rng = np.random.default_rng(11)
        levels = [rng.normal(size=(1, cfg.d_emb, 3, 2, 2)) for _ in range(4)]
        n0 = len(tape().nodes)
        out = add_depth_embedding(levels, table, enabled=False)
        assert len(tape().nodes) == n0
        for lv, o in zip(levels, out):
            assert np.array_equal(o.data, lv)
            assert o.requires_grad is False

    def test_gradient_reaches_table(self):
        cfg = tiny_encoder_config(design_depth=7)
        table = init_depth_table(cfg, np.float64)
        rng = np.random.default_rng(12)
        levels = [rng.normal(size=(1, cfg.d_emb, 3, 2, 2)) for _ in range(4)]
        out = add_depth_embedding(levels, table, enabled=True)
        total = tsum(out[0])
        for o in out[1:]:
            total = total + tsum(o)
        backward(total, np.asarray(1.0))
        assert table.grad is not None
        assert np.abs(table.grad).max() > 0

    def test_table_gradient_matches_finite_differences(self):
        cfg = tiny_encoder_config(d_emb=4, design_depth=6)
        table = init_depth_table(cfg, np.float64)
        t0 = np.random.default_rng(13).normal(size=table.data.shape)
        table.data = t0.copy()
        rng = np.random.default_rng(14)
        levels = [rng.normal(size=(1, 4, 3, 2, 2)) for _ in range(4)]
        g = [rng.normal(size=(1, 4, 3, 2, 2)) for _ in range(4)]

        out = add_depth_embedding(levels, table, enabled=True)
        for o, gi in zip(out, g):
            backward(o, gi)

        from voxbox.nn import interp_matrix

        def f(tv):
            w = interp_matrix(6, 3, np.float64).T
            emb = (tv @ w)[None, :, :, None, None]
            return float(sum((lv + emb) * gi for lv, gi in zip(levels, g)).sum())

        check_grad(f, table.grad, t0, tol=1e-6)


class TestImportedEncoder:
    def make_files(self, tmp_path, d=6, g=2, c=5, hw=8):
        rng = np.random.default_rng(15)
        levels = [rng.normal(size=(1, c, d, g, g)).astype(np.float32) for _ in range(4)]
        pyr = FeaturePyramid(levels, (d, hw, hw), subject_id="s1",
                             encoder_tag=f"test;src={d}x{hw}x{hw}")
        write_feature_file(pyr, tmp_path / "s1.vxf")
        return levels

    def cfg(self, tmp_path, **kw):
        return tiny_encoder_config(backend="imported", feature_dir=str(tmp_path), d_emb=5, **kw)

    def test_depth_window(self, tmp_path):
        levels = self.make_files(tmp_path)
        enc = ImportedEncoder(self.cfg(tmp_path))
        pyr = enc.encode_subvolume(np.zeros((1, 1, 2, 8, 8)), meta={"subject_id": "s1", "z_offset": 3})
        for got, full in zip(pyr.levels, levels):
            assert np.array_equal(got, full[:, :, 3:5])

    def test_missing_subject_named(self, tmp_path):
        self.make_files(tmp_path)
        enc = ImportedEncoder(self.cfg(tmp_path))
        with pytest.raises(FileNotFoundError, match="s2"):
            enc.encode_subvolume(np.zeros((1, 1, 2, 8, 8)), meta={"subject_id": "s2"})

    def test_inplane_partition_rejected(self, tmp_path):
        self.make_files(tmp_path)
        enc = ImportedEncoder(self.cfg(tmp_path))
        with pytest.raises(ValueError, match="full"):
            enc.encode_subvolume(np.zeros((1, 1, 2, 4, 4)), meta={"subject_id": "s1", "z_offset": 0})

    def test_depth_overrun_rejected(self, tmp_path):
        self.make_files(tmp_path, d=4)
        enc = ImportedEncoder(self.cfg(tmp_path))
        with pytest.raises(ValueError, match="depth"):
            enc.encode_subvolume(np.zeros((1, 1, 3, 8, 8)), meta={"subject_id": "s1", "z_offset": 2})
