"""Tests for conditional probabilities, soft thresholds and selection masks."""

import math

import numpy as np
import pytest
import torch

import oracles
from dias.errors import UsageError
from dias.gradcheck import grad_check
from dias.sparse import (
    MAGNITUDE,
    PROBABILITY,
    ConditionalProbabilityMatrix,
    ThresholdSet,
    conditional_probabilities,
    hard_mask,
    select,
    smooth_mask,
    soft_thresholds,
)
from dias.spatial import SpatialResidualMatrix, dense_loss


def _residual(values, kind="inter"):
    return SpatialResidualMatrix(kind, torch.as_tensor(np.asarray(values, dtype=np.float64)))


def _random_residual(rng, n):
    """Symmetric, zero-diagonal residuals like the inter kind."""
    upper = np.triu(rng.uniform(0, 2, size=(n, n)), 1)
    return upper + upper.T


def _thresholds(row, col):
    row = torch.tensor(row, dtype=torch.float64)
    col = torch.tensor(col, dtype=torch.float64)
    zero = torch.zeros_like(row)
    one = torch.tensor(1.0, dtype=torch.float64)
    return ThresholdSet(row, col, one, one, row, zero, col, zero)


class TestConditionalProbabilities:
    def test_zero_residual(self):
        assert float(conditional_probabilities(_residual([[0.0]])).values[0, 0]) == 0.5

    def test_ln3(self):
        p = conditional_probabilities(_residual([[math.log(3.0)]]))
        assert float(p.values[0, 0]) == pytest.approx(0.25, abs=1e-12)

    def test_large_residual(self):
        p = conditional_probabilities(_residual([[10.0]]))
        assert float(p.values[0, 0]) == pytest.approx(4.54e-5, rel=1e-3)

    def test_range_and_monotone(self, rng):
        values = np.sort(rng.uniform(0, 5, size=50))
        p = conditional_probabilities(_residual([values])).values[0]
        assert bool((p > 0).all()) and bool((p <= 0.5).all())
        assert bool((p[1:] <= p[:-1]).all())

    def test_inter_diagonal_is_half(self, rng):
        p = conditional_probabilities(_residual(_random_residual(rng, 4)))
        assert torch.diagonal(p.values).tolist() == [0.5] * 4


class TestSoftThresholds:
    def test_constant_row(self):
        P = ConditionalProbabilityMatrix(torch.full((3, 3), 0.3, dtype=torch.float64))
        t = soft_thresholds(P, 2.0, 5.0)
        assert t.row_thresholds.tolist() == pytest.approx([0.3] * 3, abs=1e-15)
        assert t.col_thresholds.tolist() == pytest.approx([0.3] * 3, abs=1e-15)

    def test_hand_value(self):
        P = ConditionalProbabilityMatrix(torch.tensor([[0.2, 0.4, 0.6]] * 3, dtype=torch.float64))
        t = soft_thresholds(P, 1.0, 1.0)
        assert t.row_thresholds.tolist() == pytest.approx([0.56330] * 3, abs=1e-4)
        assert oracles.kappa([0.2, 0.4, 0.6], 1.0) == pytest.approx(0.56330, abs=1e-4)
        # Columns are constant
        assert t.col_thresholds.tolist() == pytest.approx([0.2, 0.4, 0.6], abs=1e-12)

    def test_beta_zero_gives_mean(self, rng):
        values = torch.as_tensor(rng.uniform(0, 0.5, size=(4, 4)))
        t = soft_thresholds(ConditionalProbabilityMatrix(values), 0.0, 0.0)
        assert torch.equal(t.row_thresholds, values.mean(dim=1))
        assert torch.equal(t.col_thresholds, values.mean(dim=0))

    def test_matches_oracle(self, rng):
        values = rng.uniform(0, 0.5, size=(5, 5))
        t = soft_thresholds(ConditionalProbabilityMatrix(torch.as_tensor(values)), 0.7, 1.3)
        expected_rows = [oracles.kappa(list(values[i]), 0.7) for i in range(5)]
        expected_cols = [oracles.kappa(list(values[:, j]), 1.3) for j in range(5)]
        assert t.row_thresholds.tolist() == pytest.approx(expected_rows, abs=1e-12)
        assert t.col_thresholds.tolist() == pytest.approx(expected_cols, abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(UsageError):
            soft_thresholds(ConditionalProbabilityMatrix(torch.ones(1, 1, dtype=torch.float64)), 1.0, 1.0)


class TestHardMask:
    def test_equal_zero_residuals_select_nothing(self):
        for beta in (0.0, 0.5, 3.0):
            _, mask = select(_residual(np.zeros((4, 4))), beta, beta, MAGNITUDE)
            assert mask.selected_count == 0

    def test_equal_residuals_probability_space(self):
        for value in (0.0, 0.7, 1.9):
            for beta in (0.0, 1.0):
                _, mask = select(_residual(np.full((2, 2), value)), beta, beta, PROBABILITY)
                assert mask.selected_count == 0

    def test_hand_value(self):
        thresholds, mask = select(_residual([[0.0, 5.0], [5.0, 0.0]]), 0.0, 0.0, MAGNITUDE)
        assert thresholds.row_thresholds.tolist() == pytest.approx([0.2534] * 2, abs=1e-4)
        assert mask.values.tolist() == [[0.0, 1.0], [1.0, 0.0]]
        assert mask.selected_count == 2

    def test_thresholds_above_max(self):
        mask = hard_mask(_residual([[0.0, 1.0], [1.5, 0.0]]), _thresholds([3.0, 3.0], [3.0, 3.0]))
        assert mask.selected_count == 0

    def test_count_matches_ones(self, rng):
        _, mask = select(_residual(_random_residual(rng, 6)), 0.5, 0.5)
        assert mask.selected_count == int(mask.values.sum())
        assert set(mask.values.unique().tolist()) <= {0.0, 1.0}

    def test_brute_force_oracle(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 7))
            values = _random_residual(rng, n) if rng.random() < 0.5 else rng.uniform(0, 2, size=(n, n))
            beta_row, beta_col = rng.uniform(-1, 3, size=2)
            residual = _residual(values)
            _, magnitude = select(residual, beta_row, beta_col, MAGNITUDE)
            _, probability = select(residual, beta_row, beta_col, PROBABILITY)
            assert magnitude.values.tolist() == oracles.hard_mask_magnitude(values.tolist(), beta_row, beta_col)
            assert probability.values.tolist() == oracles.hard_mask_probability(values.tolist(), beta_row, beta_col)

    def test_count_non_increasing_in_beta(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 7))
            residual = _residual(rng.uniform(0.01, 2, size=(n, n)))
            counts = [select(residual, beta, beta)[1].selected_count for beta in np.linspace(0, 4, 9)]
            assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_unknown_space(self):
        with pytest.raises(UsageError):
            select(_residual(np.ones((2, 2))), 1.0, 1.0, "log")


class TestSmoothMask:
    def test_at_threshold(self):
        weights = smooth_mask(_residual([[0.5]]), _thresholds([0.5], [0.5]), 0.1)
        assert float(weights[0, 0]) == 0.5

    def test_hand_value(self):
        weights = smooth_mask(_residual([[1.0]]), _thresholds([0.5], [0.2]), 0.1)
        assert float(weights[0, 0]) == pytest.approx(0.9933, abs=1e-4)

    def test_brackets_hard_mask(self, rng):
        for _ in range(50):
            residual = _residual(_random_residual(rng, 5))
            thresholds, mask = select(residual, 0.8, 1.1)
            soft = smooth_mask(residual, thresholds, 0.1)
            assert bool(((soft - mask.values).abs() < 0.5).all())

    def test_low_temperature_limit(self, rng):
        residual = _residual(_random_residual(rng, 5))
        thresholds, mask = select(residual, 0.5, 0.5)
        soft = smooth_mask(residual, thresholds, 1e-6)
        assert soft.round().tolist() == mask.values.tolist()

    def test_bad_temperature(self):
        with pytest.raises(UsageError):
            smooth_mask(_residual([[1.0]]), _thresholds([0.5], [0.5]), 0.0)

    def test_beta_gradients(self, rng):
        values = torch.as_tensor(_random_residual(rng, 5))

        def loss(p):
            residual = SpatialResidualMatrix("inter", values)
            thresholds = soft_thresholds(conditional_probabilities(residual), p["beta_row"], p["beta_col"])
            return dense_loss(residual, smooth_mask(residual, thresholds, 0.1), average=True)

        params = {"beta_row": torch.tensor(0.8, dtype=torch.float64), "beta_col": torch.tensor(1.4, dtype=torch.float64)}
        assert all(r.passed for r in grad_check(loss, params))
