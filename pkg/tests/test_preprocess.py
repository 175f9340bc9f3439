"""Standardization pipeline and augmentation."""

import numpy as np
import pytest

from oracles import center_of_mass_naive, interp1d_points, percentile_sorted
from voxbox.preprocess import (
    PreprocessConfig,
    apply_ops_to_coords,
    augment,
    clip_minmax,
    foreground_crop,
    median_inplane_spacing,
    normalize,
    preprocess_subject,
    reorient_ras,
    resample,
)
from voxbox.volume import LabelVolume, Volume


def vol_of(arr, **kw):
    return Volume(np.asarray(arr, dtype=np.float32), **kw)


class TestReorient:
    def test_already_canonical_is_unchanged(self):
        rng = np.random.default_rng(0)
        v = vol_of(rng.normal(size=(3, 4, 5)))
        out = reorient_ras(v)
        assert np.array_equal(out.voxels, v.voxels)
        assert np.array_equal(out.direction, np.eye(3))

    def test_flipped_axis_is_reversed_and_sign_corrected(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(3, 4, 5)).astype(np.float32)
        d = np.eye(3)
        d[:, 0] *= -1  # depth axis points Inferior
        v = Volume(data, direction=d)
        out = reorient_ras(v)
        assert np.array_equal(out.voxels, data[::-1])
        assert np.array_equal(out.direction, np.eye(3))

    def test_permuted_axes_recovered(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=(3, 4, 5)).astype(np.float32)
        # voxel axes stored (W,H,D): anti-diagonal direction in the zyx frame
        d = np.zeros((3, 3))
        d[2, 0] = 1  # axis0 -> Right
        d[1, 1] = 1  # axis1 -> Anterior
        d[0, 2] = 1  # axis2 -> Superior
        v = Volume(data, direction=d)
        out = reorient_ras(v)
        assert out.voxels.shape == (5, 4, 3)
        assert np.array_equal(out.voxels, np.transpose(data, (2, 1, 0)))

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        d = np.zeros((3, 3))
        d[2, 0] = -1
        d[0, 1] = 1
        d[1, 2] = -1
        v = Volume(rng.normal(size=(4, 5, 6)).astype(np.float32), spacing=(1, 2, 3), direction=d)
        once = reorient_ras(v)
        twice = reorient_ras(once)
        assert np.array_equal(once.voxels, twice.voxels)
        assert np.array_equal(once.direction, twice.direction)
        assert np.array_equal(once.spacing, twice.spacing)

    def test_degenerate_direction_rejected(self):
        d = np.eye(3)
        d[:, 1] = d[:, 0]  # two axes share a dominant world direction
        d[2, 2] = 1
        with pytest.raises(ValueError):
            reorient_ras(Volume(np.zeros((2, 2, 2), dtype=np.float32),
                                direction=np.array([[0.9, 0.9, 0.1], [0.1, 0.1, 0.2], [0.1, 0.2, 0.9]])))

    def test_label_round_trips_through_reorient(self):
        lbl = LabelVolume((np.arange(27).reshape(3, 3, 3) % 2).astype(np.uint8))
        out = reorient_ras(lbl)
        assert isinstance(out, LabelVolume)
        assert set(np.unique(out.voxels)) <= {0, 1}


class TestResample:
    def test_identity_spacing(self):
        rng = np.random.default_rng(4)
        v = vol_of(rng.normal(size=(4, 5, 6)), spacing=(1.0, 1.0, 1.0))
        out = resample(v, (1.0, 1.0, 1.0))
        assert out.voxels.shape == (4, 5, 6)
        assert np.allclose(out.voxels, v.voxels, atol=1e-6)

    def test_constant_volume(self):
        v = vol_of(np.full((4, 4, 4), 2.5), spacing=(2.0, 2.0, 2.0))
        out = resample(v, (1.0, 1.0, 1.0))
        assert out.voxels.shape == (8, 8, 8)
        assert np.allclose(out.voxels, 2.5, atol=1e-6)

    def test_1d_ramp_halving_spacing_doubles_samples(self):
        ramp = np.arange(4.0)
        v = vol_of(ramp.reshape(1, 1, 4), spacing=(1.0, 1.0, 2.0))
        out = resample(v, (1.0, 1.0, 1.0))
        assert out.voxels.shape == (1, 1, 8)
        assert np.allclose(out.voxels.reshape(-1), interp1d_points(ramp, 8), atol=1e-6)

    def test_labels_stay_binary_nearest(self):
        lbl = LabelVolume((np.random.default_rng(5).random((6, 6, 6)) > 0.5).astype(np.uint8),
                          spacing=(2.0, 2.0, 2.0))
        out = resample(lbl, (1.5, 1.5, 1.5))
        assert isinstance(out, LabelVolume)
        assert set(np.unique(out.voxels)) <= {0, 1}
        assert out.voxels.shape == (8, 8, 8)


class TestNormalize:
    def test_full_range_percentiles(self):
        vals = np.arange(101, dtype=np.float32)
        v = vol_of(np.repeat(vals, 2).reshape(101, 2, 1))
        cfg = PreprocessConfig(clip_percentiles=(0.0, 100.0))
        u01 = clip_minmax(v, cfg)
        assert np.allclose(u01.voxels, v.voxels / 100.0)
        out = normalize(v, cfg)
        assert abs(out.voxels.mean()) <= 1e-6
        assert abs(out.voxels.std() - 1.0) <= 1e-6

    def test_mean_zero_std_one_for_random_inputs(self):
        rng = np.random.default_rng(6)
        v = vol_of(rng.gamma(2.0, 3.0, size=(8, 8, 8)))
        out = normalize(v, PreprocessConfig())
        assert abs(out.voxels.mean()) <= 1e-6
        assert abs(out.voxels.std() - 1.0) <= 1e-6

    def test_outlier_clipped_to_percentile(self):
        rng = np.random.default_rng(7)
        base = rng.normal(0, 1, size=(10, 10, 10))
        base[0, 0, 0] = 1e6  # one extreme outlier
        cfg = PreprocessConfig(clip_percentiles=(0.5, 99.5))
        v = vol_of(base)
        u01 = clip_minmax(v, cfg)
        # the outlier lands exactly on the top of the clipped range
        assert u01.voxels[0, 0, 0] == 1.0
        hi = percentile_sorted(v.voxels, 99.5)
        lo = percentile_sorted(v.voxels, 0.5)
        assert np.allclose(u01.voxels[1, 1, 1], (np.clip(v.voxels[1, 1, 1], lo, hi) - lo) / (hi - lo), atol=1e-6)

    def test_percentiles_match_sorting_oracle(self):
        rng = np.random.default_rng(8)
        vals = rng.normal(size=257)
        for q in (0.5, 25.0, 99.5):
            assert np.isclose(np.percentile(vals, q), percentile_sorted(vals, q))

    def test_constant_image_rejected(self):
        with pytest.raises(ValueError):
            normalize(vol_of(np.full((3, 3, 3), 2.0)), PreprocessConfig())


class TestForegroundCrop:
    def test_exact_size_volume_is_identity(self):
        rng = np.random.default_rng(9)
        data = rng.random((8, 8, 8)).astype(np.float32)
        v = vol_of(data)
        l = LabelVolume(np.zeros((8, 8, 8), dtype=np.uint8))
        out_v, out_l, status = foreground_crop(v, l, (8, 8, 8), fg_threshold=0.05)
        assert status == "ok"
        assert np.array_equal(out_v.voxels, data)

    def test_point_mass_at_corner_clamps_window(self):
        data = np.zeros((16, 16, 16), dtype=np.float32)
        data[0, 0, 0] = 1.0
        v = vol_of(data)
        l = LabelVolume(np.zeros_like(data, dtype=np.uint8))
        out_v, _, _ = foreground_crop(v, l, (8, 8, 8), fg_threshold=0.5)
        assert out_v.voxels[0, 0, 0] == 1.0  # window clamped to contain the corner

    def test_center_of_mass_matches_naive_oracle(self):
        rng = np.random.default_rng(10)
        data = (rng.random((9, 9, 9)) > 0.8).astype(np.float32)
        com = center_of_mass_naive(data, 0.5)
        from voxbox.preprocess import _center_of_mass

        assert np.allclose(_center_of_mass(data > 0.5), com)

    def test_small_volume_zero_padded(self):
        v = vol_of(np.ones((4, 4, 4)))
        l = LabelVolume(np.ones((4, 4, 4), dtype=np.uint8))
        out_v, out_l, _ = foreground_crop(v, l, (6, 6, 6), fg_threshold=0.5)
        assert out_v.voxels.shape == (6, 6, 6)
        assert out_l.voxels.shape == (6, 6, 6)
        assert out_v.voxels.sum() == 4**3

    def test_empty_foreground_falls_back_to_center(self):
        v = vol_of(np.zeros((8, 8, 8)))
        l = LabelVolume(np.zeros((8, 8, 8), dtype=np.uint8))
        _, _, status = foreground_crop(v, l, (4, 4, 4), fg_threshold=0.5)
        assert status == "empty-foreground"


class TestAugment:
    def cfg(self, flip=0.5, rot=0.5, seed=0):
        return PreprocessConfig(aug_flip_prob=flip, aug_rot90_prob=rot, seed=seed)

    def test_zero_probability_is_identity(self):
        rng = np.random.default_rng(11)
        v = vol_of(rng.random((4, 4, 4)))
        l = LabelVolume((rng.random((4, 4, 4)) > 0.5).astype(np.uint8))
        v2, l2, ops = augment(v, l, self.cfg(flip=0.0, rot=0.0), np.random.default_rng(0))
        assert ops == []
        assert np.array_equal(v2.voxels, v.voxels)
        assert np.array_equal(l2.voxels, l.voxels)

    def test_double_flip_is_identity(self):
        rng = np.random.default_rng(12)
        data = rng.random((4, 4, 4)).astype(np.float32)
        assert np.array_equal(np.flip(np.flip(data, axis=1), axis=1), data)

    def test_four_rotations_are_identity(self):
        rng = np.random.default_rng(13)
        data = rng.random((4, 4, 4)).astype(np.float32)
        out = data
        for _ in range(4):
            out = np.rot90(out, 1, axes=(0, 2))
        assert np.array_equal(out, data)

    def test_labels_stay_binary_and_aligned(self):
        rng = np.random.default_rng(14)
        v = vol_of(rng.random((4, 4, 4)))
        l = LabelVolume((rng.random((4, 4, 4)) > 0.5).astype(np.uint8))
        for seed in range(20):
            v2, l2, ops = augment(v, l, self.cfg(), np.random.default_rng(seed))
            assert set(np.unique(l2.voxels)) <= {0, 1}
            # geometric alignment: transforming foreground coordinates lands
            # exactly on the transformed label's foreground
            coords = np.argwhere(l.voxels > 0)
            mapped, ext = apply_ops_to_coords(coords, ops, l.voxels.shape)
            got = set(map(tuple, np.argwhere(l2.voxels > 0)))
            assert got == set(map(tuple, mapped))
            assert ext == l2.voxels.shape

    def test_non_cubic_extents_never_change(self):
        rng = np.random.default_rng(16)
        v = vol_of(rng.random((4, 8, 8)))
        l = LabelVolume((rng.random((4, 8, 8)) > 0.5).astype(np.uint8))
        for seed in range(30):
            v2, l2, _ = augment(v, l, self.cfg(flip=0.5, rot=1.0), np.random.default_rng(seed))
            assert v2.voxels.shape == (4, 8, 8)
            assert l2.voxels.shape == (4, 8, 8)

    def test_fully_anisotropic_volume_skips_rotation(self):
        rng = np.random.default_rng(17)
        v = vol_of(rng.random((3, 5, 7)))
        l = LabelVolume(np.zeros((3, 5, 7), dtype=np.uint8))
        _, _, ops = augment(v, l, self.cfg(flip=0.0, rot=1.0), np.random.default_rng(0))
        assert ops == []

    def test_same_rng_state_reproduces(self):
        rng = np.random.default_rng(15)
        v = vol_of(rng.random((4, 4, 4)))
        l = LabelVolume((rng.random((4, 4, 4)) > 0.5).astype(np.uint8))
        a = augment(v, l, self.cfg(), np.random.default_rng(77))
        b = augment(v, l, self.cfg(), np.random.default_rng(77))
        assert np.array_equal(a[0].voxels, b[0].voxels)
        assert a[2] == b[2]


class TestPipeline:
    def make_subject(self, seed=0, extents=(20, 22, 24)):
        rng = np.random.default_rng(seed)
        img = rng.normal(10, 4, size=extents).astype(np.float32)
        img[6:12, 8:14, 9:15] += 40.0  # bright blob = foreground
        lbl = np.zeros(extents, dtype=np.uint8)
        lbl[7:11, 9:13, 10:14] = 1
        d = np.eye(3)
        d[:, 2] *= -1
        return (Volume(img, spacing=(2.0, 1.0, 1.0), direction=d),
                LabelVolume(lbl, spacing=(2.0, 1.0, 1.0), direction=d))

    def test_deterministic(self):
        v, l = self.make_subject()
        cfg = PreprocessConfig(target_spacing=(1.0, 1.0, 1.0), crop_extent=(16, 16, 16))
        a = preprocess_subject(v, l, cfg)
        b = preprocess_subject(v, l, cfg)
        assert np.array_equal(a[0].voxels, b[0].voxels)
        assert np.array_equal(a[1].voxels, b[1].voxels)

    def test_output_geometry_and_binary_labels(self):
        v, l = self.make_subject()
        cfg = PreprocessConfig(target_spacing=(1.0, 1.0, 1.0), crop_extent=(16, 16, 16))
        img, lbl, status = preprocess_subject(v, l, cfg)
        assert status["crop_status"] == "ok"
        assert img.voxels.shape == (16, 16, 16)
        assert lbl.voxels.shape == (16, 16, 16)
        assert set(np.unique(lbl.voxels)) <= {0, 1}
        assert lbl.voxels.sum() > 0  # foreground survived the crop

    def test_median_spacing_helper(self):
        vols = [Volume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(3.0, s, s)) for s in (0.5, 1.0, 2.0)]
        assert median_inplane_spacing(vols) == (1.0, 1.0, 1.0)
