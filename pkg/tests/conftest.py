"""Shared pytest fixtures for the DIAS test suite."""

import numpy as np
import pytest
import torch

from dias.config import BatchSpec, DiasConfig, EvalConfig, ModelConfig, OptimConfig, SynthSpec
from dias.embedding import LocalEmbeddingSet, Modality, l2_normalize, stack_sets
from dias.utils import setup_torch


def pytest_configure(config):
    setup_torch(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sets(
    n: int,
    d: int,
    modality: Modality,
    rng: np.random.Generator,
    max_count: int = 4,
) -> list[LocalEmbeddingSet]:
    """Unit-norm local embeddings with random counts in [1, max_count]."""
    sets = []
    for i in range(n):
        count = int(rng.integers(1, max_count + 1))
        vectors = l2_normalize(torch.as_tensor(rng.standard_normal((count, d)), dtype=torch.float64))
        sets.append(LocalEmbeddingSet(i, modality, vectors))
    return sets


@pytest.fixture
def random_batch(rng):
    """Factory for (image_sets, text_sets, image_batch, text_batch)."""

    def build(n: int = 4, d: int = 6, max_count: int = 4):
        images = random_sets(n, d, Modality.IMAGE, rng, max_count)
        texts = random_sets(n, d, Modality.TEXT, rng, max_count)
        return images, texts, stack_sets(images), stack_sets(texts)

    return build


@pytest.fixture
def small_config() -> DiasConfig:
    """Reduced configuration for end-to-end tests."""
    return DiasConfig(
        seed=0,
        batch=BatchSpec(clusters_M=4, per_cluster_P=8, kmeans_k=8, kmeans_iters=5),
        optim=OptimConfig(epochs=4, learning_rate=0.01, val_pairs=40),
        model=ModelConfig(embed_dim=16),
        synth=SynthSpec(num_pairs=200, latent_dim=8, d_in_image=16, d_in_text=16, texts_per_image=2),
        eval=EvalConfig(folds=1, chunk_size=32),
    ).validate()
