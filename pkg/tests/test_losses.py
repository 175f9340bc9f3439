"""DiceCE loss and the evaluation metrics."""

import numpy as np
import pytest

from oracles import check_grad
from voxbox.losses import LossConfig, binarize, dice_ce_loss, dsc, iou, vol_error_pct
from voxbox.tensor import Tensor, backward


class TestLossConfig:
    def test_both_zero_weights_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(lambda_dice=0.0, lambda_ce=0.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(lambda_dice=-1.0)


class TestDiceCeLoss:
    def test_saturated_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = (rng.random((4, 4, 4)) > 0.5).astype(np.float64)
        logits = np.where(gt > 0, 20.0, -20.0)
        loss = dice_ce_loss(Tensor(logits), gt)
        assert float(loss.data) <= 1e-6

    def test_uniform_logits_give_ln2_ce(self):
        rng = np.random.default_rng(1)
        gt = (rng.random((5, 5, 5)) > 0.7).astype(np.float64)
        loss = dice_ce_loss(Tensor(np.zeros((5, 5, 5))), gt, LossConfig(lambda_dice=0.0))
        assert abs(float(loss.data) - np.log(2.0)) <= 1e-12

    def test_extent_mismatch(self):
        with pytest.raises(ValueError, match="extents"):
            dice_ce_loss(Tensor(np.zeros((2, 2))), np.zeros((3, 2)))

    def test_nonnegative_for_random_inputs(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            logits = rng.normal(0, 5, size=(3, 3, 3))
            gt = (rng.random((3, 3, 3)) > rng.random()).astype(np.float64)
            assert float(dice_ce_loss(Tensor(logits), gt).data) >= 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(4, 4, 4))
        gt = (rng.random((4, 4, 4)) > 0.6).astype(np.float64)
        cfg = LossConfig(lambda_dice=1.0, lambda_ce=1.0, smooth=1e-5)
        x = Tensor(x0, requires_grad=True)
        backward(dice_ce_loss(x, gt, cfg), np.asarray(1.0))

        def f(v):
            return float(dice_ce_loss(Tensor(v), gt, cfg).data)

        check_grad(f, x.grad, x0, tol=1e-5)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=64)
        gt = (rng.random(64) > 0.5).astype(np.float64)
        perm = rng.permutation(64)
        a = float(dice_ce_loss(Tensor(logits.reshape(4, 4, 4)), gt.reshape(4, 4, 4)).data)
        b = float(dice_ce_loss(Tensor(logits[perm].reshape(4, 4, 4)), gt[perm].reshape(4, 4, 4)).data)
        assert abs(a - b) <= 1e-12

    def test_minimal_tape_retains_no_volume_buffer(self):
        from voxbox.tensor import tape

        x = Tensor(np.zeros((16, 16, 16)), requires_grad=True)
        before = tape().meter.live_bytes
        dice_ce_loss(x, np.zeros((16, 16, 16)))
        added = tape().meter.live_bytes - before
        assert added < x.data.nbytes / 16  # scalars only, not another volume


class TestMetrics:
    def test_identical_nonempty_masks(self):
        m = (np.random.default_rng(5).random((4, 4, 4)) > 0.5)
        assert dsc(m, m) == 1.0
        assert iou(m, m) == 1.0
        assert vol_error_pct(m, m) == 0.0

    def test_counting_example(self):
        a = np.zeros(8, dtype=bool)
        b = np.zeros(8, dtype=bool)
        a[:4] = True
        b[2:6] = True  # |A|=4, |B|=4, overlap 2
        assert dsc(a, b) == 0.5
        assert iou(a, b) == pytest.approx(1.0 / 3.0)
        assert vol_error_pct(a, b) == 0.0

    def test_empty_conventions(self):
        z = np.zeros((3, 3, 3), dtype=bool)
        m = z.copy()
        m[0, 0, 0] = True
        assert dsc(z, z) == 1.0 and iou(z, z) == 1.0
        assert dsc(m, z) == 0.0 and iou(m, z) == 0.0
        assert vol_error_pct(m, z) is None

    def test_iou_dsc_identity_on_random_masks(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            a = rng.random((3, 3, 3)) > rng.random()
            b = rng.random((3, 3, 3)) > rng.random()
            d = dsc(a, b)
            assert abs(iou(a, b) - d / (2.0 - d)) <= 1e-12

    def test_bounds_and_ordering(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.random((4, 4)) > rng.random()
            b = rng.random((4, 4)) > rng.random()
            d, j = dsc(a, b), iou(a, b)
            assert 0.0 <= j <= d <= 1.0
            if d in (0.0, 1.0):
                assert j == d

    def test_extent_mismatch(self):
        with pytest.raises(ValueError, match="extents"):
            dsc(np.zeros((2, 2), dtype=bool), np.zeros((3, 2), dtype=bool))

    def test_binarize_threshold(self):
        probs = np.array([0.2, 0.5, 0.8])
        assert np.array_equal(binarize(probs), [False, False, True])
        logits = np.array([-1.0, 0.0, 1.0])
        assert np.array_equal(binarize(logits, from_logits=True), [False, False, True])
