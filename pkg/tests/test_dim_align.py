"""Tests for dimension vectors, the correlation matrix and the alignment loss."""

import pytest
import torch

import oracles
from dias.dim_align import DimensionVectorBank, build_dimension_bank, correlation_matrix, dim_align_loss
from dias.embedding import LocalEmbeddingSet, Modality
from dias.errors import UsageError


def _t(rows):
    return torch.tensor(rows, dtype=torch.float64)


def _set(rows, modality, instance_id=0):
    return LocalEmbeddingSet(instance_id, modality, _t(rows))


class TestDimensionBank:
    def test_single_vectors_become_columns(self):
        images = [_set([[1.0, 2.0]], Modality.IMAGE, 0), _set([[3.0, 4.0]], Modality.IMAGE, 1)]
        texts = [_set([[5.0, 6.0]], Modality.TEXT, 0), _set([[7.0, 8.0]], Modality.TEXT, 1)]
        bank = build_dimension_bank(images, texts)
        torch.testing.assert_close(bank.image_dim_vectors, _t([[1.0, 3.0], [2.0, 4.0]]))
        torch.testing.assert_close(bank.text_dim_vectors, _t([[5.0, 7.0], [6.0, 8.0]]))

    def test_instance_is_mean_pooled(self):
        images = [_set([[1.0, 0.0], [3.0, 0.0]], Modality.IMAGE, 0), _set([[0.0, 1.0]], Modality.IMAGE, 1)]
        texts = [_set([[1.0, 1.0]], Modality.TEXT, 0), _set([[1.0, 2.0]], Modality.TEXT, 1)]
        bank = build_dimension_bank(images, texts)
        torch.testing.assert_close(bank.image_dim_vectors[:, 0], _t([2.0, 0.0]))

    def test_row_permutation_invariance(self):
        texts = [_set([[1.0, 1.0]], Modality.TEXT, 0), _set([[1.0, 2.0]], Modality.TEXT, 1)]
        a = build_dimension_bank(
            [_set([[1.0, 0.0], [3.0, 5.0]], Modality.IMAGE, 0), _set([[0.0, 1.0]], Modality.IMAGE, 1)], texts
        )
        b = build_dimension_bank(
            [_set([[3.0, 5.0], [1.0, 0.0]], Modality.IMAGE, 0), _set([[0.0, 1.0]], Modality.IMAGE, 1)], texts
        )
        torch.testing.assert_close(a.image_dim_vectors, b.image_dim_vectors)

    def test_needs_two_pairs(self):
        with pytest.raises(UsageError):
            build_dimension_bank([_set([[1.0]], Modality.IMAGE)], [_set([[1.0]], Modality.TEXT)])

    def test_resample_mode(self, random_batch):
        _, _, image_batch, text_batch = random_batch(n=5, d=3)
        generator = torch.Generator().manual_seed(0)
        bank = build_dimension_bank(image_batch, text_batch, "resample", 4, generator)
        assert bank.image_dim_vectors.shape == (3, 20)
        assert bank.num_samples == 20

    def test_unknown_pairing(self, random_batch):
        _, _, image_batch, text_batch = random_batch(n=3, d=3)
        with pytest.raises(UsageError):
            build_dimension_bank(image_batch, text_batch, "nearest")


class TestCorrelationMatrix:
    def test_affine_relation(self):
        C = correlation_matrix(DimensionVectorBank(_t([[1.0, 2.0, 3.0]]), _t([[2.0, 4.0, 6.0]])))
        assert float(C.values[0, 0]) == pytest.approx(1.0, abs=1e-6)

    def test_reversed_relation(self):
        C = correlation_matrix(DimensionVectorBank(_t([[1.0, 2.0, 3.0]]), _t([[3.0, 2.0, 1.0]])))
        assert float(C.values[0, 0]) == pytest.approx(-1.0, abs=1e-6)

    def test_self_correlation_has_unit_diagonal(self, rng):
        rows = torch.as_tensor(rng.standard_normal((4, 10)))
        C = correlation_matrix(DimensionVectorBank(rows, rows.clone()))
        torch.testing.assert_close(torch.diagonal(C.values), torch.ones(4, dtype=torch.float64), atol=1e-6, rtol=0)

    def test_zero_variance_row(self):
        C = correlation_matrix(DimensionVectorBank(_t([[5.0, 5.0, 5.0], [1.0, 2.0, 4.0]]), _t([[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]])))
        assert C.values[0].tolist() == [0.0, 0.0]
        assert C.diagnostics == ("image dimension 0 has zero variance",)

    def test_entries_bounded(self, rng):
        for _ in range(20):
            C = correlation_matrix(
                DimensionVectorBank(torch.as_tensor(rng.standard_normal((3, 6))), torch.as_tensor(rng.standard_normal((3, 6))))
            )
            assert bool((C.values.abs() <= 1 + 1e-6).all())

    def test_matches_oracle(self, rng):
        image_samples = rng.standard_normal((6, 4))
        text_samples = rng.standard_normal((6, 4))
        C = correlation_matrix(DimensionVectorBank(torch.as_tensor(image_samples.T), torch.as_tensor(text_samples.T)))
        expected = oracles.pearson_matrix(image_samples.tolist(), text_samples.tolist())
        for i in range(4):
            assert C.values[i].tolist() == pytest.approx(expected[i], abs=1e-12)


class TestDimAlignLoss:
    def test_normalized_identity(self):
        for d in (1, 3, 8):
            assert float(dim_align_loss(torch.eye(d, dtype=torch.float64), "normalized")) == -2.0 * d

    def test_naive_identity(self):
        assert float(dim_align_loss(torch.eye(3, dtype=torch.float64), "naive")) == -3.0

    def test_normalized_hand_value(self):
        C = _t([[1.0, 0.5], [0.5, 1.0]])
        assert float(dim_align_loss(C, "normalized")) == pytest.approx(-8.0 / 3.0, abs=1e-9)
        assert oracles.dim_loss_normalized(C.tolist()) == pytest.approx(-8.0 / 3.0, abs=1e-9)

    def test_normalized_lower_bound(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 6))
            C = torch.as_tensor(rng.uniform(-1, 1, size=(d, d)))
            for variant in ("normalized", "normalized-signed"):
                assert float(dim_align_loss(C, variant)) >= -2.0 * d - 1e-12

    def test_anti_correlated_dimensions(self):
        C = -torch.eye(3, dtype=torch.float64)
        assert float(dim_align_loss(C, "normalized-signed")) == 6.0
        assert float(dim_align_loss(C, "normalized")) == -6.0

    def test_signed_numerator_prefers_positive_diagonal(self):
        C = _t([[0.8, 0.1], [0.1, 0.8]])
        flipped = _t([[-0.8, 0.1], [0.1, 0.8]])
        assert float(dim_align_loss(C, "normalized-signed")) < float(dim_align_loss(flipped, "normalized-signed"))
        assert float(dim_align_loss(C, "normalized")) == float(dim_align_loss(flipped, "normalized"))

    def test_normalized_scale_invariance(self, rng):
        C = torch.as_tensor(rng.uniform(-1, 1, size=(4, 4)))
        base = float(dim_align_loss(C, "normalized"))
        assert float(dim_align_loss(2.5 * C, "normalized")) == pytest.approx(base, abs=1e-12)

    def test_naive_monotone(self, rng):
        C = torch.as_tensor(rng.uniform(-1, 1, size=(3, 3)))
        base = float(dim_align_loss(C, "naive"))
        up_diag = C.clone()
        up_diag[1, 1] += 0.1
        down_off = C.clone()
        down_off[0, 2] -= 0.1
        assert float(dim_align_loss(up_diag, "naive")) < base
        assert float(dim_align_loss(down_off, "naive")) < base

    def test_matches_oracle(self, rng):
        for _ in range(20):
            C = rng.uniform(-1, 1, size=(5, 5))
            expected = {
                "naive": oracles.dim_loss_naive(C.tolist()),
                "normalized": oracles.dim_loss_normalized(C.tolist()),
                "normalized-signed": oracles.dim_loss_normalized(C.tolist(), signed=True),
            }
            for variant, value in expected.items():
                assert float(dim_align_loss(torch.as_tensor(C), variant)) == pytest.approx(value, abs=1e-10)

    def test_unknown_variant(self):
        with pytest.raises(UsageError):
            dim_align_loss(torch.eye(2, dtype=torch.float64), "squared")
