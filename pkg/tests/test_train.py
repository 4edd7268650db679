"""Tests for the training loop, its schedule and checkpoints."""

import dataclasses
import math

import pytest
import torch

from dias.errors import NonFiniteLossError, UsageError
from dias.objective import LossBreakdown
from dias.synth import gen_synth
from dias.train import LOG_FIELDS, TrainState, _check_finite, learning_rate_at, split_corpus, train
from dias.utils import load_jsonl


@pytest.fixture
def synthetic(small_config):
    return gen_synth(small_config.synth).corpus


def _with_optim(config, **overrides):
    return dataclasses.replace(config, optim=dataclasses.replace(config.optim, **overrides))


class TestSchedule:
    def test_decay_ratio(self, small_config):
        for epoch in range(1, 10):
            ratio = learning_rate_at(small_config, epoch) / learning_rate_at(small_config, epoch - 1)
            assert ratio == pytest.approx(0.9, abs=1e-12)

    def test_records_follow_schedule(self, small_config, synthetic):
        result = train(_with_optim(small_config, epochs=3), synthetic)
        lrs = [r["lr"] for r in result.records]
        assert lrs[0] == pytest.approx(small_config.optim.learning_rate, rel=1e-12)
        for prev, cur in zip(lrs, lrs[1:]):
            assert cur / prev == pytest.approx(0.9, rel=1e-9)


class TestTrain:
    def test_zero_learning_rate_keeps_parameters(self, small_config, synthetic):
        config = _with_optim(small_config, epochs=2, learning_rate=0.0)
        untrained = train(_with_optim(config, epochs=0), synthetic).state
        trained = train(config, synthetic).state
        for name, value in untrained.projection.named_tensors().items():
            assert torch.equal(value, trained.projection.named_tensors()[name])
        for name, value in untrained.betas.named_tensors().items():
            assert torch.equal(value, trained.betas.named_tensors()[name])

    def test_same_seed_same_trace(self, small_config, synthetic):
        config = _with_optim(small_config, epochs=2)
        a = train(config, synthetic).records
        b = train(config, synthetic).records
        assert a == b

    def test_batch_seed_drives_sampling(self, small_config, synthetic):
        config = _with_optim(small_config, epochs=1)
        reseeded = dataclasses.replace(config, batch=dataclasses.replace(config.batch, seed=7))
        assert train(config, synthetic).records != train(reseeded, synthetic).records

    def test_records_and_log(self, small_config, synthetic, tmp_path):
        log_path = tmp_path / "train_log.jsonl"
        result = train(_with_optim(small_config, epochs=2), synthetic, log_path)
        logged = load_jsonl(log_path)
        assert logged == result.records
        assert [r["epoch"] for r in logged] == [0, 1]
        for record in logged:
            assert set(record) == {"epoch", "lr", "val_rsum", *LOG_FIELDS}
            assert all(math.isfinite(record[key]) for key in LOG_FIELDS)
            assert 0.0 <= record["mask_density_inter"] <= 1.0
        assert result.final_report.rsum == logged[-1]["val_rsum"]

    def test_training_improves_validation(self, small_config, synthetic):
        result = train(_with_optim(small_config, epochs=8), synthetic)
        assert result.final_report.rsum > result.initial_report.rsum

    def test_corpus_too_small(self, small_config, synthetic):
        with pytest.raises(UsageError):
            train(small_config, synthetic.subset(range(50)))


class TestHelpers:
    def test_split_holds_out_tail(self, small_config, synthetic):
        train_set, val_set = split_corpus(synthetic, small_config)
        assert val_set.num_images == small_config.optim.val_pairs
        assert train_set.num_images + val_set.num_images == synthetic.num_images
        assert val_set.image_ids[0] == synthetic.image_ids[train_set.num_images]

    def test_non_finite_term_is_named(self):
        zero = torch.tensor(0.0, dtype=torch.float64)
        breakdown = LossBreakdown(torch.tensor(math.nan), zero, zero, torch.tensor(math.inf), zero, 0.0, 0.0)
        with pytest.raises(NonFiniteLossError) as info:
            _check_finite(breakdown)
        assert info.value.term == "total"

        breakdown = LossBreakdown(zero, zero, zero, torch.tensor(math.inf), zero, 0.0, 0.0)
        with pytest.raises(NonFiniteLossError) as info:
            _check_finite(breakdown)
        assert info.value.term == "inter"

    def test_checkpoint_round_trip(self, small_config, synthetic, tmp_path):
        state = train(_with_optim(small_config, epochs=1), synthetic).state
        path = tmp_path / "checkpoint.pt"
        state.save(path, small_config)
        loaded = TrainState.load(path)
        assert loaded.epoch == 1
        assert loaded.learning_rate == pytest.approx(state.learning_rate)
        for name, value in state.projection.named_tensors().items():
            assert torch.equal(value, loaded.projection.named_tensors()[name])
        for name, value in state.betas.named_tensors().items():
            assert torch.equal(value, loaded.betas.named_tensors()[name])
