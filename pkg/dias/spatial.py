"""
Inter- and intra-modality spatial constraints.

Distances are cosine distances between global embeddings. The inter-modality
residual measures asymmetry of the image-to-text distance matrix; the
intra-modality residual measures disagreement between the image-image and
text-text distance matrices.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch

from dias.embedding import GlobalEmbedding, cosine_matrix
from dias.errors import UsageError

logger = logging.getLogger(__name__)

INTER = "inter"
INTRA = "intra"


@dataclass(frozen=True)
class InterModalDistanceMatrix:
    """x_ij = 1 - cos(image_i, text_j)."""

    values: torch.Tensor


@dataclass(frozen=True)
class IntraModalDistanceMatrix:
    """y_ij between images and z_ij between texts; symmetric, zero diagonal."""

    image_values: torch.Tensor
    text_values: torch.Tensor


@dataclass(frozen=True)
class SpatialResidualMatrix:
    """Nonnegative residuals |x_ij - x_ji| (inter) or |y_ij - z_ij| (intra)."""

    kind: str
    values: torch.Tensor

    @property
    def size(self) -> int:
        return int(self.values.shape[0])


class HistogramBin(NamedTuple):
    bin_start: float
    bin_end: float
    count: int


def _stack(embeddings: Sequence[GlobalEmbedding] | torch.Tensor) -> torch.Tensor:
    if isinstance(embeddings, torch.Tensor):
        return embeddings
    if not embeddings:
        raise UsageError("Expected at least one global embedding")
    return torch.stack([e.vector for e in embeddings])


def _self_distance(vectors: torch.Tensor) -> torch.Tensor:
    distance = 1.0 - cosine_matrix(vectors, vectors)
    distance = 0.5 * (distance + distance.T)
    off_diagonal = 1.0 - torch.eye(distance.shape[0], dtype=distance.dtype)
    return distance * off_diagonal


def inter_distance(
    images: Sequence[GlobalEmbedding] | torch.Tensor,
    texts: Sequence[GlobalEmbedding] | torch.Tensor,
) -> InterModalDistanceMatrix:
    """
    Cosine distance between every image and every text global embedding.

    Args:
        images: N image globals (list or (N x d) tensor)
        texts: N text globals, index-aligned matched pairs

    Returns:
        InterModalDistanceMatrix with entries in [0, 2]
    """
    v = _stack(images)
    t = _stack(texts)
    if v.shape[0] != t.shape[0]:
        raise UsageError(f"inter_distance: {v.shape[0]} images but {t.shape[0]} texts")
    return InterModalDistanceMatrix(1.0 - cosine_matrix(v, t))


def intra_distance(
    images: Sequence[GlobalEmbedding] | torch.Tensor,
    texts: Sequence[GlobalEmbedding] | torch.Tensor,
) -> IntraModalDistanceMatrix:
    """Cosine distances within each modality."""
    v = _stack(images)
    t = _stack(texts)
    if v.shape[0] != t.shape[0]:
        raise UsageError(f"intra_distance: {v.shape[0]} images but {t.shape[0]} texts")
    return IntraModalDistanceMatrix(_self_distance(v), _self_distance(t))


def residual(
    distances: InterModalDistanceMatrix | IntraModalDistanceMatrix,
) -> SpatialResidualMatrix:
    """
    Elementwise consistency residual.

    Args:
        distances: Inter matrix (gives |X - X^T|) or intra pair (gives |Y - Z|)

    Returns:
        SpatialResidualMatrix of the matching kind
    """
    if isinstance(distances, InterModalDistanceMatrix):
        x = distances.values
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise UsageError("Inter residual needs a square distance matrix")
        return SpatialResidualMatrix(INTER, (x - x.T).abs())

    y, z = distances.image_values, distances.text_values
    if y.shape != z.shape or y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise UsageError("Intra residual needs two square matrices of the same shape")
    return SpatialResidualMatrix(INTRA, (y - z).abs())


def dense_loss(
    residual_matrix: SpatialResidualMatrix,
    mask: torch.Tensor | None = None,
    average: bool = False,
) -> torch.Tensor:
    """
    Sum of (optionally masked) squared residuals.

    Args:
        residual_matrix: Residuals to penalize
        mask: Optional 0/1 or soft weights of the same shape, as a tensor
            or a selection carrying them in `.values`
        average: Divide by N^2 (batch-size independent form used in training)

    Returns:
        Scalar loss tensor
    """
    values = residual_matrix.values
    squared = values * values
    if mask is not None:
        weights = mask if isinstance(mask, torch.Tensor) else mask.values
        if weights.shape != values.shape:
            raise UsageError(f"dense_loss: mask shape {tuple(weights.shape)} != {tuple(values.shape)}")
        squared = squared * weights.to(values.dtype)
    total = squared.sum()
    if average:
        total = total / float(values.shape[0] ** 2)
    return total


def off_diagonal_values(matrix: torch.Tensor) -> np.ndarray:
    """Flatten the off-diagonal entries of a square matrix."""
    values = matrix.detach().cpu().numpy()
    keep = ~np.eye(values.shape[0], dtype=bool)
    return values[keep]


def distance_histogram(values: Sequence[float] | np.ndarray, bins: int) -> list[HistogramBin]:
    """
    Equal-width histogram over [min, max].

    Args:
        values: Flat finite distances
        bins: Number of bins (>= 1)

    Returns:
        List of HistogramBin; empty input gives an empty list
    """
    if bins < 1:
        raise UsageError("distance_histogram: bins must be >= 1")
    data = np.asarray(values, dtype=np.float64).ravel()
    if data.size == 0:
        return []
    if not np.all(np.isfinite(data)):
        raise UsageError("distance_histogram: values must be finite")

    counts, edges = np.histogram(data, bins=bins, range=(float(data.min()), float(data.max())))
    return [
        HistogramBin(float(edges[i]), float(edges[i + 1]), int(counts[i]))
        for i in range(bins)
    ]
