"""Losses and metrics against hand-computed values and independent oracles."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hitta.errors import ShapeError, ValidationError
from hitta.objectives import (
    cross_entropy_loss,
    divergence_loss,
    divergence_map,
    dsc,
    entropy_map,
    feedback_loss,
    one_hot_mask,
    prediction_entropy,
    soft_dice_loss,
)

from conftest import random_simplex
from oracles import brute_divergence

SQRT_HALF = math.sqrt(0.5)


def pix(*vectors):
    """Stack per-prediction class vectors into an (N, K, 1, 1) tensor."""
    return torch.tensor([[[[c]] for c in v] for v in vectors], dtype=torch.float64)


class TestDivergenceMap:
    def test_identical_predictions_give_zero_map(self):
        p = pix((0.2, 0.3, 0.5), (0.2, 0.3, 0.5), (0.2, 0.3, 0.5))
        assert torch.allclose(divergence_map(p), torch.zeros(1, 1, dtype=torch.float64))

    def test_two_opposite_onehots(self):
        # mean = (0.5, 0.5); both deviations have norm sqrt(0.5)
        value = float(divergence_map(pix((1.0, 0.0), (0.0, 1.0))))
        assert value == pytest.approx(SQRT_HALF, abs=1e-9)
        assert value == pytest.approx(0.70711, abs=5e-6)

    def test_three_predictions_count_normalized(self):
        # mean = (0.5, 0.5); deviations sqrt(0.5), sqrt(0.5), 0 → (2·sqrt(0.5))/3
        value = float(divergence_map(pix((1.0, 0.0), (0.0, 1.0), (0.5, 0.5))))
        assert value == pytest.approx(2.0 * SQRT_HALF / 3.0, abs=1e-9)
        assert value == pytest.approx(0.47140, abs=5e-6)

    def test_single_prediction_rejected(self):
        with pytest.raises(ValidationError):
            divergence_map(pix((1.0, 0.0)))

    def test_non_simplex_rejected(self):
        bad = pix((0.9, 0.9), (0.1, 0.1))
        with pytest.raises(ValidationError):
            divergence_map(bad)

    def test_matches_brute_force_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            n = int(rng.integers(2, 6))
            k = int(rng.integers(2, 4))
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            preds = random_simplex((n, k, h, w), rng)
            ours = divergence_map(torch.from_numpy(preds)).numpy()
            assert np.abs(ours - brute_divergence(preds)).max() < 1e-6

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(3)
        preds = torch.from_numpy(random_simplex((4, 3, 5, 5), rng))
        base = divergence_map(preds)
        for perm in ([1, 0, 3, 2], [3, 2, 1, 0], [2, 3, 0, 1]):
            assert torch.allclose(divergence_map(preds[perm]), base, atol=1e-12)

    def test_nonnegative_and_bounded_by_sqrt2(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            preds = torch.from_numpy(random_simplex((5, 3, 6, 6), rng))
            m = divergence_map(preds)
            assert float(m.min()) >= 0.0
            assert float(m.max()) <= math.sqrt(2.0) + 1e-9

    def test_zero_gradient_when_all_predictions_agree(self):
        logits = torch.zeros(3, 2, 2, 2, dtype=torch.float64, requires_grad=True)
        loss = divergence_map(torch.softmax(logits, dim=1)).mean()
        loss.backward()
        assert torch.all(logits.grad == 0)


class TestDivergenceLoss:
    def test_zero_map(self):
        assert divergence_loss(torch.zeros(4, 4)).item() == 0.0

    def test_uniform_map_returns_the_constant(self):
        assert divergence_loss(torch.full((3, 5), 0.25)).item() == pytest.approx(0.25)

    def test_hand_mean(self):
        value = divergence_loss(torch.tensor([[SQRT_HALF], [0.0]], dtype=torch.float64)).item()
        assert value == pytest.approx(SQRT_HALF / 2.0, abs=1e-9)
        assert value == pytest.approx(0.35355, abs=5e-6)

    def test_empty_map_rejected(self):
        with pytest.raises(ValidationError):
            divergence_loss(torch.zeros(0, 4))


class TestSoftDice:
    def test_perfect_overlap_is_nearly_zero(self):
        target = one_hot_mask(np.array([[0, 1], [2, 1]]), 3).double()
        loss = soft_dice_loss(target.clone(), target).item()
        assert 0.0 <= loss < 1e-4

    def test_half_confidence_single_pixel(self):
        probs = torch.tensor([[[0.5]], [[0.5]]], dtype=torch.float64)
        target = torch.tensor([[[0.0]], [[1.0]]], dtype=torch.float64)
        assert soft_dice_loss(probs, target).item() == pytest.approx(1.0 / 3.0, abs=1e-4)

    def test_all_zero_weight_degenerates_to_zero_loss(self):
        rng = np.random.default_rng(0)
        probs = torch.from_numpy(random_simplex((1, 3, 4, 4), rng))[0]
        target = one_hot_mask(np.zeros((4, 4), dtype=np.uint8), 3).double()
        loss = soft_dice_loss(probs, target, torch.zeros(4, 4, dtype=torch.float64)).item()
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            soft_dice_loss(torch.rand(3, 4, 4), torch.rand(3, 5, 5))

    def test_value_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            probs = torch.from_numpy(random_simplex((2, 3, 6, 6), rng))
            labels = rng.integers(0, 3, size=(2, 6, 6))
            target = torch.stack([one_hot_mask(m, 3).double() for m in labels])
            value = soft_dice_loss(probs, target).item()
            assert 0.0 <= value <= 1.0


class TestCrossEntropy:
    def test_perfect_prediction(self):
        target = one_hot_mask(np.array([[0, 2], [1, 1]]), 3).double()
        assert cross_entropy_loss(target.clone(), target).item() == pytest.approx(0.0, abs=1e-12)

    def test_half_probability_single_pixel_is_ln2(self):
        probs = torch.tensor([[[0.5]], [[0.5]]], dtype=torch.float64)
        target = torch.tensor([[[0.0]], [[1.0]]], dtype=torch.float64)
        assert cross_entropy_loss(probs, target).item() == pytest.approx(math.log(2), abs=1e-9)
        assert cross_entropy_loss(probs, target).item() == pytest.approx(0.69315, abs=5e-6)

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(2)
        probs = torch.from_numpy(random_simplex((1, 3, 4, 4), rng))[0]
        target = one_hot_mask(rng.integers(0, 3, size=(4, 4)), 3).double()
        w = torch.from_numpy(rng.uniform(0.1, 2.0, size=(4, 4)))
        a = cross_entropy_loss(probs, target, w).item()
        b = cross_entropy_loss(probs, target, 2.0 * w).item()
        assert a == pytest.approx(b, rel=1e-12)

    def test_zero_weight_sum_rejected(self):
        probs = torch.tensor([[[0.5]], [[0.5]]], dtype=torch.float64)
        target = torch.tensor([[[0.0]], [[1.0]]], dtype=torch.float64)
        with pytest.raises(ValidationError):
            cross_entropy_loss(probs, target, torch.zeros(1, 1, dtype=torch.float64))


class TestEntropy:
    def test_one_hot_gives_zero(self):
        target = one_hot_mask(np.array([[0, 1], [2, 0]]), 3).double()
        assert prediction_entropy(target).item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_three_classes_is_ln3(self):
        probs = torch.full((3, 2, 2), 1.0 / 3.0, dtype=torch.float64)
        assert prediction_entropy(probs).item() == pytest.approx(math.log(3), abs=1e-9)
        assert prediction_entropy(probs).item() == pytest.approx(1.09861, abs=5e-6)

    def test_bounds(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            probs = torch.from_numpy(random_simplex((3, 5, 5), rng))
            value = prediction_entropy(probs).item()
            assert -1e-9 <= value <= math.log(3) + 1e-9


class TestFeedbackLoss:
    def test_all_terms_vanish_on_perfect_predictions(self):
        target = one_hot_mask(np.array([[0, 1], [2, 1]]), 3).double()
        mdiv = torch.rand(2, 2, dtype=torch.float64)
        loss = feedback_loss(target.clone(), target.clone(), target, mdiv)
        assert loss.item() == pytest.approx(0.0, abs=1e-4)

    def test_zero_weight_map_equals_unweighted_sum(self):
        rng = np.random.default_rng(4)
        y_hat = torch.from_numpy(random_simplex((1, 3, 4, 4), rng))[0]
        y_tilde = torch.from_numpy(random_simplex((1, 3, 4, 4), rng))[0]
        target = one_hot_mask(rng.integers(0, 3, size=(4, 4)), 3).double()
        weighted = feedback_loss(y_hat, y_tilde, target, torch.zeros(4, 4, dtype=torch.float64))
        unweighted = (
            soft_dice_loss(y_tilde, target).value
            + cross_entropy_loss(y_tilde, target).value
            + soft_dice_loss(y_hat, target).value
            + cross_entropy_loss(y_hat, target).value
        )
        assert weighted.item() == pytest.approx(float(unweighted), rel=1e-12)

    def test_single_pixel_hand_sum(self):
        # dice 1/3 and CE ln 2 per head → 2/3 + 2 ln 2 ≈ 2.0530
        probs = torch.tensor([[[0.5]], [[0.5]]], dtype=torch.float64)
        target = torch.tensor([[[0.0]], [[1.0]]], dtype=torch.float64)
        loss = feedback_loss(probs, probs.clone(), target, torch.zeros(1, 1, dtype=torch.float64))
        assert loss.item() == pytest.approx(2.0 / 3.0 + 2.0 * math.log(2), abs=1e-4)
        assert loss.item() == pytest.approx(2.0530, abs=2e-4)

    def test_components_sum_to_value(self):
        rng = np.random.default_rng(6)
        y_hat = torch.from_numpy(random_simplex((1, 3, 4, 4), rng))[0]
        y_tilde = torch.from_numpy(random_simplex((1, 3, 4, 4), rng))[0]
        target = one_hot_mask(rng.integers(0, 3, size=(4, 4)), 3).double()
        loss = feedback_loss(y_hat, y_tilde, target, torch.rand(4, 4, dtype=torch.float64))
        assert loss.item() == pytest.approx(sum(loss.components.values()), rel=1e-9)

    def test_missing_weight_map_needs_explicit_opt_in(self):
        target = one_hot_mask(np.array([[1]]), 3).double()
        with pytest.raises(ValidationError):
            feedback_loss(target.clone(), target.clone(), target, None)
        loss = feedback_loss(target.clone(), target.clone(), target, None, allow_unweighted=True)
        assert loss.item() == pytest.approx(0.0, abs=1e-4)


class TestDsc:
    def test_identical_masks(self):
        mask = np.array([[0, 1, 2], [1, 2, 0]], dtype=np.uint8)
        assert dsc(mask, mask) == (1.0, 1.0, 1.0)

    def test_hand_counted_overlap(self):
        # OD: |A|=4, |B|=6, |A∩B|=3 → 0.6; OC empty in both → 1.0
        a = np.zeros((4, 4), dtype=np.uint8)
        b = np.zeros((4, 4), dtype=np.uint8)
        a[0, 0:4] = 1                      # |A| = 4
        b[0, 1:4] = 1                      # overlap 3 ...
        b[1, 0:3] = 1                      # ... |B| = 6
        result = dsc(a, b)
        assert result.od == pytest.approx(0.6)
        assert result.oc == 1.0
        assert result.mean == pytest.approx(0.8)

    def test_disjoint_masks(self):
        a = np.zeros((2, 4), dtype=np.uint8)
        b = np.zeros((2, 4), dtype=np.uint8)
        a[:, :2] = 2
        b[:, 2:] = 2
        result = dsc(a, b)
        assert result.od == 0.0 and result.oc == 0.0

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_symmetry_and_range(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
        b = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
        ab, ba = dsc(a, b), dsc(b, a)
        assert ab == ba
        assert 0.0 <= ab.od <= 1.0 and 0.0 <= ab.oc <= 1.0
        assert ab.mean == pytest.approx((ab.od + ab.oc) / 2.0)
