"""
Neighbor batch sampling.

Images are clustered with K-means (k-means++ seeding, fixed Lloyd iterations)
on their mean-pooled embeddings. A batch draws M distinct clusters and P
images from each; a cluster short of images is topped up from its nearest
clusters.
"""

import logging

import numpy as np

from dias.config import BatchSpec
from dias.errors import UsageError

logger = logging.getLogger(__name__)


def kmeans_plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """
    Choose k initial centroids with D^2 weighting.

    Args:
        points: (n x d) data
        k: Number of centroids (<= n)
        rng: Random generator

    Returns:
        (k x d) centroids
    """
    n_samples, n_features = points.shape
    centroids = np.empty((k, n_features), dtype=points.dtype)
    centroids[0] = points[rng.integers(0, n_samples)]

    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # Every point already coincides with a centroid
            next_idx = rng.integers(0, n_samples)
        else:
            next_idx = rng.choice(n_samples, p=closest / total)
        centroids[i] = points[next_idx]
        closest = np.minimum(closest, np.sum((points - centroids[i]) ** 2, axis=1))

    return centroids


def kmeans(
    points: np.ndarray,
    k: int,
    iters: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Lloyd's algorithm for a fixed number of iterations.

    Args:
        points: (n x d) data
        k: Requested clusters (capped at n)
        iters: Lloyd iterations
        rng: Random generator for seeding

    Returns:
        (centroids (k x d), labels (n,))
    """
    points = np.asarray(points, dtype=np.float64)
    k = min(k, points.shape[0])
    centroids = kmeans_plusplus_init(points, k, rng)

    labels = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(iters):
        distances = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = np.argmin(distances, axis=1)

        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            # Empty clusters keep their previous centroid
            if np.any(members):
                new_centroids[j] = points[members].mean(axis=0)

        if np.allclose(new_centroids, centroids):
            centroids = new_centroids
            break
        centroids = new_centroids

    distances = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(distances, axis=1)
    return centroids, labels


def _fill(
    anchor: int,
    need: int,
    members: dict[int, np.ndarray],
    neighbor_order: dict[int, np.ndarray],
    used: np.ndarray,
    rng: np.random.Generator,
) -> list[int]:
    """Draw `need` unused images, own cluster first, then nearest clusters."""
    picked: list[int] = []
    for cluster in neighbor_order[anchor]:
        if len(picked) == need:
            break
        available = members.get(int(cluster))
        if available is None:
            continue
        available = available[~used[available]]
        if available.size == 0:
            continue
        take = min(need - len(picked), available.size)
        chosen = rng.choice(available, size=take, replace=False)
        used[chosen] = True
        picked.extend(int(i) for i in chosen)
    return picked


def sample_batches(
    image_embeddings: np.ndarray,
    spec: BatchSpec,
    rng: np.random.Generator,
    num_batches: int | None = None,
) -> list[np.ndarray]:
    """
    Build one epoch of batches of image indices.

    Args:
        image_embeddings: (n x d) mean-pooled image embeddings
        spec: Batch composition
        rng: Random generator
        num_batches: Batches to emit (default: n // batch_N)

    Returns:
        List of index arrays, each of exactly batch_N unique images
    """
    n = image_embeddings.shape[0]
    batch_n = spec.batch_N
    if n < batch_n:
        raise UsageError(f"Corpus of {n} images is smaller than the batch size {batch_n}")
    if num_batches is None:
        num_batches = max(1, n // batch_n)

    if spec.strategy == "random":
        return [np.sort(rng.choice(n, size=batch_n, replace=False)) for _ in range(num_batches)]

    if spec.kmeans_k < spec.clusters_M:
        raise UsageError(f"kmeans_k={spec.kmeans_k} must be >= clusters_M={spec.clusters_M}")

    centroids, labels = kmeans(image_embeddings, spec.kmeans_k, spec.kmeans_iters, rng)
    members = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
    nonempty = np.array(sorted(members))
    centroid_gaps = np.sum((centroids[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    neighbor_order = {int(c): np.argsort(centroid_gaps[c], kind="stable") for c in nonempty}
    logger.debug(f"K-means: {len(nonempty)} non-empty clusters of {centroids.shape[0]}")

    batches = []
    for _ in range(num_batches):
        used = np.zeros(n, dtype=bool)
        chosen = rng.choice(nonempty, size=min(spec.clusters_M, nonempty.size), replace=False)
        indices: list[int] = []
        for slot in range(spec.clusters_M):
            anchor = int(chosen[slot % chosen.size])
            indices.extend(_fill(anchor, spec.per_cluster_P, members, neighbor_order, used, rng))
        batches.append(np.array(indices, dtype=np.int64))

    return batches
