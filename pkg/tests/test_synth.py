"""Tests for the synthetic corpus generator."""

import numpy as np
import pytest

from dias.config import SynthSpec
from dias.corpus import write_corpus
from dias.errors import UsageError
from dias.synth import gen_synth


def _spec(**overrides):
    values = dict(num_pairs=30, latent_dim=4, d_in_image=8, d_in_text=6, texts_per_image=3, seed=5)
    values.update(overrides)
    return SynthSpec(**values)


class TestGenSynth:
    def test_shapes_and_counts(self):
        spec = _spec(regions_range=(2, 3), words_range=(1, 4))
        corpus = gen_synth(spec).corpus
        assert corpus.num_images == 30
        assert corpus.num_texts == 90
        assert all(m.dtype == np.float32 for m in corpus.images + corpus.texts)
        assert all(2 <= m.shape[0] <= 3 and m.shape[1] == 8 for m in corpus.images)
        assert all(1 <= m.shape[0] <= 4 and m.shape[1] == 6 for m in corpus.texts)
        assert corpus.ground_truth()[4] == {12, 13, 14}

    def test_noiseless_rank(self):
        corpus = gen_synth(_spec(noise_sigma=0.0)).corpus
        assert np.linalg.matrix_rank(np.concatenate(corpus.images).astype(np.float64), tol=1e-4) <= 4
        assert np.linalg.matrix_rank(np.concatenate(corpus.texts).astype(np.float64), tol=1e-4) <= 4
        for regions in corpus.images:
            assert np.linalg.matrix_rank(regions.astype(np.float64), tol=1e-4) == 1

    def test_noiseless_latents_recovered(self):
        synthetic = gen_synth(_spec(noise_sigma=0.0))
        assert synthetic.latent_residual < 1e-6

    def test_same_seed_same_bytes(self, tmp_path):
        write_corpus(gen_synth(_spec()).corpus, tmp_path / "a.json")
        write_corpus(gen_synth(_spec()).corpus, tmp_path / "b.json")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_seed_changes_corpus(self):
        a = gen_synth(_spec(seed=1)).corpus
        b = gen_synth(_spec(seed=2)).corpus
        assert a.images[0].tobytes() != b.images[0].tobytes()

    def test_matched_pairs_separate(self):
        synthetic = gen_synth(_spec(num_pairs=1000, latent_dim=16, d_in_image=32, d_in_text=32, noise_sigma=0.1))
        assert synthetic.matched_cosine > synthetic.unmatched_cosine
        assert synthetic.matched_cosine > 0.9

    def test_invalid_ranges(self):
        with pytest.raises(UsageError):
            gen_synth(_spec(regions_range=(0, 3)))
        with pytest.raises(UsageError):
            gen_synth(_spec(words_range=(5, 2)))
        with pytest.raises(UsageError):
            gen_synth(_spec(noise_sigma=-0.1))
