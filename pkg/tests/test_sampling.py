"""Tests for K-means and neighbor batch sampling."""

import numpy as np
import pytest

from dias.config import BatchSpec
from dias.errors import UsageError
from dias.sampling import kmeans, kmeans_plusplus_init, sample_batches


def _blobs(rng, centers, per_blob, noise=0.1):
    points = np.concatenate([c + noise * rng.standard_normal((per_blob, len(c))) for c in centers])
    labels = np.repeat(np.arange(len(centers)), per_blob)
    return points, labels


FOUR_CENTERS = np.array([[100.0, 0.0], [-100.0, 0.0], [0.0, 100.0], [0.0, -100.0]])


class TestKMeans:
    def test_plusplus_spreads_over_blobs(self, rng):
        points, labels = _blobs(rng, FOUR_CENTERS, 20)
        centroids = kmeans_plusplus_init(points, 4, rng)
        nearest = {int(np.argmin(np.sum((FOUR_CENTERS - c) ** 2, axis=1))) for c in centroids}
        assert nearest == {0, 1, 2, 3}

    def test_recovers_blobs(self, rng):
        points, truth = _blobs(rng, FOUR_CENTERS, 25)
        centroids, labels = kmeans(points, 4, 20, rng)
        assert centroids.shape == (4, 2)
        for blob in range(4):
            assert len(set(labels[truth == blob].tolist())) == 1
        assert len(set(labels.tolist())) == 4

    def test_k_capped_at_points(self, rng):
        centroids, labels = kmeans(rng.standard_normal((3, 2)), 10, 5, rng)
        assert centroids.shape[0] == 3
        assert labels.shape == (3,)

    def test_identical_points(self, rng):
        centroids, labels = kmeans(np.ones((6, 3)), 3, 5, rng)
        assert np.allclose(centroids, 1.0)
        assert labels.shape == (6,)


class TestSampleBatches:
    def test_single_cluster(self, rng):
        points = rng.standard_normal((40, 3))
        spec = BatchSpec(clusters_M=1, per_cluster_P=10, kmeans_k=1, kmeans_iters=5)
        batches = sample_batches(points, spec, rng)
        assert len(batches) == 4
        for batch in batches:
            assert batch.size == 10
            assert len(set(batch.tolist())) == 10

    def test_batch_size_and_uniqueness(self, rng):
        points = rng.standard_normal((200, 4))
        spec = BatchSpec(clusters_M=4, per_cluster_P=8, kmeans_k=16, kmeans_iters=10)
        batches = sample_batches(points, spec, rng, num_batches=10)
        assert len(batches) == 10
        for batch in batches:
            assert batch.size == spec.batch_N
            assert len(set(batch.tolist())) == spec.batch_N
            assert batch.min() >= 0 and batch.max() < 200

    def test_at_most_m_clusters(self, rng):
        points, truth = _blobs(rng, FOUR_CENTERS, 20)
        spec = BatchSpec(clusters_M=2, per_cluster_P=5, kmeans_k=4, kmeans_iters=10)
        for batch in sample_batches(points, spec, rng, num_batches=20):
            assert len(set(truth[batch].tolist())) <= 2

    def test_two_blobs_are_pure(self, rng):
        points, truth = _blobs(rng, FOUR_CENTERS[:2], 30)
        spec = BatchSpec(clusters_M=1, per_cluster_P=8, kmeans_k=2, kmeans_iters=10)
        for batch in sample_batches(points, spec, rng, num_batches=20):
            assert len(set(truth[batch].tolist())) == 1

    def test_small_cluster_topped_up(self, rng):
        small = FOUR_CENTERS[0] + 0.1 * rng.standard_normal((3, 2))
        large = FOUR_CENTERS[1] + 0.1 * rng.standard_normal((30, 2))
        points = np.concatenate([small, large])
        spec = BatchSpec(clusters_M=2, per_cluster_P=5, kmeans_k=2, kmeans_iters=10)
        for batch in sample_batches(points, spec, rng, num_batches=10):
            assert batch.size == 10
            assert len(set(batch.tolist())) == 10
            # The small blob is exhausted before anything else
            assert set(range(3)) <= set(batch.tolist())

    def test_random_strategy(self, rng):
        points = rng.standard_normal((50, 2))
        spec = BatchSpec(clusters_M=2, per_cluster_P=5, strategy="random")
        for batch in sample_batches(points, spec, rng, num_batches=5):
            assert batch.size == 10
            assert len(set(batch.tolist())) == 10

    def test_deterministic(self):
        points = np.random.default_rng(0).standard_normal((64, 3))
        spec = BatchSpec(clusters_M=2, per_cluster_P=4, kmeans_k=4, kmeans_iters=5)
        a = sample_batches(points, spec, np.random.default_rng(5))
        b = sample_batches(points, spec, np.random.default_rng(5))
        assert [x.tolist() for x in a] == [x.tolist() for x in b]

    def test_corpus_too_small(self, rng):
        spec = BatchSpec(clusters_M=4, per_cluster_P=8, kmeans_k=8)
        with pytest.raises(UsageError):
            sample_batches(rng.standard_normal((31, 2)), spec, rng)

    def test_k_below_m(self, rng):
        spec = BatchSpec(clusters_M=4, per_cluster_P=2, kmeans_k=2)
        with pytest.raises(UsageError):
            sample_batches(rng.standard_normal((20, 2)), spec, rng)
