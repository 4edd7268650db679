"""
Triplet loss, negative mining and the combined DIAS objective.

L = L_loc + w_dim * L_dim + w_inter * L_inter + w_intra * L_intra

L_loc is the bidirectional hinge over one mined negative per direction,
summed over anchors. The spatial terms are averaged over the N^2 entries.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from dias.config import DimAlignConfig, LossWeights, SparsityConfig
from dias.dim_align import build_dimension_bank, correlation_matrix, dim_align_loss
from dias.embedding import GlobalEmbedding, LocalBatch, cosine
from dias.errors import UsageError
from dias.interaction import paired_globals, pairwise_similarity
from dias.sparse import conditional_probabilities, hard_mask, smooth_mask, soft_thresholds
from dias.spatial import SpatialResidualMatrix, dense_loss, inter_distance, intra_distance, residual
from dias.utils import DTYPE

logger = logging.getLogger(__name__)

DEFAULT_NEGATIVE_CLIP = 100.0
# Keeps log(dist) and log(1 - dist^2 / 4) finite at the ends of [0, 2].
DISTANCE_FLOOR = 1e-6


class NegativeIndices(NamedTuple):
    """One mined negative per anchor and direction."""

    text_for_image: np.ndarray  # negative text index for each image anchor
    image_for_text: np.ndarray  # negative image index for each text anchor


@dataclass
class Betas:
    """Learnable sparsity parameters, row/column side per residual kind."""

    inter_row: torch.Tensor
    inter_col: torch.Tensor
    intra_row: torch.Tensor
    intra_col: torch.Tensor

    @classmethod
    def init(cls, value: float = 1.0) -> "Betas":
        return cls(*(torch.tensor(float(value), dtype=DTYPE) for _ in range(4)))

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {
            "beta_inter_row": self.inter_row,
            "beta_inter_col": self.inter_col,
            "beta_intra_row": self.intra_row,
            "beta_intra_col": self.intra_col,
        }

    def requires_grad_(self, flag: bool = True) -> "Betas":
        for tensor in self.named_tensors().values():
            tensor.requires_grad_(flag)
        return self

    def detach(self) -> "Betas":
        return Betas(*(t.detach().clone() for t in self.named_tensors().values()))


@dataclass
class LossBreakdown:
    """Total loss and its terms; tensors keep the autograd graph."""

    total: torch.Tensor
    loc: torch.Tensor
    dim: torch.Tensor
    inter: torch.Tensor
    intra: torch.Tensor
    mask_density_inter: float
    mask_density_intra: float

    def terms(self) -> dict[str, torch.Tensor]:
        return {"total": self.total, "loc": self.loc, "dim": self.dim, "inter": self.inter, "intra": self.intra}

    def as_floats(self) -> dict[str, float]:
        values = {f"loss_{name}": float(t.detach().item()) for name, t in self.terms().items()}
        values["mask_density_inter"] = self.mask_density_inter
        values["mask_density_intra"] = self.mask_density_intra
        return values


def triplet_loss(
    anchor_img: GlobalEmbedding | torch.Tensor,
    pos_text: GlobalEmbedding | torch.Tensor,
    neg_text: GlobalEmbedding | torch.Tensor,
    neg_img: GlobalEmbedding | torch.Tensor,
    alpha: float = 0.2,
) -> torch.Tensor:
    """
    Bidirectional hinge with cosine similarity.

    Args:
        anchor_img: Image global embedding
        pos_text: Matched text global embedding
        neg_text: Negative text for the image anchor
        neg_img: Negative image for the text anchor
        alpha: Margin

    Returns:
        [alpha - s(V,T) + s(V,T-)]_+ + [alpha - s(V,T) + s(V-,T)]_+
    """
    v, t, t_neg, v_neg = (e.vector if isinstance(e, GlobalEmbedding) else e for e in (anchor_img, pos_text, neg_text, neg_img))
    positive = cosine(v, t)
    return torch.relu(alpha - positive + cosine(v, t_neg)) + torch.relu(alpha - positive + cosine(v_neg, t))


def batch_triplet_loss(similarity: torch.Tensor, negatives: NegativeIndices, alpha: float = 0.2) -> torch.Tensor:
    """Triplet hinge read off a pairwise score matrix, summed over the N anchors."""
    n = similarity.shape[0]
    rows = torch.arange(n)
    positive = torch.diagonal(similarity)
    neg_text = similarity[rows, torch.as_tensor(negatives.text_for_image, dtype=torch.long)]
    neg_img = similarity[torch.as_tensor(negatives.image_for_text, dtype=torch.long), rows]
    hinge = torch.relu(alpha - positive + neg_text) + torch.relu(alpha - positive + neg_img)
    return hinge.sum()


def _sampling_weights(similarities: np.ndarray, dim: int, clip: float) -> np.ndarray:
    """Inverse density of unit-sphere distances, clipped at `clip` times the smallest weight."""
    dist = np.sqrt(np.clip(2.0 - 2.0 * similarities, 0.0, 4.0))
    dist = np.clip(dist, DISTANCE_FLOOR, 2.0 - DISTANCE_FLOOR)
    log_q = (dim - 2.0) * np.log(dist) + ((dim - 3.0) / 2.0) * np.log(1.0 - 0.25 * dist * dist)
    log_w = -log_q
    log_w = log_w - log_w.min()
    log_w = np.minimum(log_w, math.log(clip))
    weights = np.exp(log_w)
    return weights / weights.sum()


def mine_negatives(
    similarity: torch.Tensor | np.ndarray,
    dim: int,
    seed: int | np.random.Generator = 0,
    clip: float = DEFAULT_NEGATIVE_CLIP,
) -> NegativeIndices:
    """
    Distance-weighted negative sampling in both directions.

    Args:
        similarity: (N x N) cosine scores, matched pairs on the diagonal
        dim: Embedding dimensionality of the sphere the scores live on
        seed: Seed or numpy Generator
        clip: Cap on the weight ratio between most and least favoured candidate

    Returns:
        NegativeIndices; a negative never equals its anchor
    """
    if isinstance(similarity, torch.Tensor):
        similarity = similarity.detach().cpu().numpy()
    scores = np.asarray(similarity, dtype=np.float64)
    n = scores.shape[0]
    if n < 2:
        raise UsageError("mine_negatives needs at least 2 pairs")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def draw(row_scores: np.ndarray, anchor: int) -> int:
        candidates = np.array([j for j in range(n) if j != anchor])
        probs = _sampling_weights(row_scores[candidates], dim, clip)
        return int(rng.choice(candidates, p=probs))

    text_for_image = np.array([draw(scores[i, :], i) for i in range(n)], dtype=np.int64)
    image_for_text = np.array([draw(scores[:, j], j) for j in range(n)], dtype=np.int64)
    return NegativeIndices(text_for_image, image_for_text)


def topk_mask(residual_matrix: SpatialResidualMatrix, k: int) -> torch.Tensor:
    """Keep the k largest residuals of every row."""
    values = residual_matrix.values.detach()
    k = min(k, values.shape[1])
    index = torch.topk(values, k, dim=1).indices
    mask = torch.zeros_like(values)
    return mask.scatter_(1, index, 1.0)


def spatial_term(
    residual_matrix: SpatialResidualMatrix,
    beta_row: torch.Tensor,
    beta_col: torch.Tensor,
    sparsity: SparsityConfig,
    sparse: bool = True,
    training: bool = True,
) -> tuple[torch.Tensor, float]:
    """
    One spatial-constraint term and the density of its selection.

    Args:
        residual_matrix: Inter or intra residuals
        beta_row: Row-side sparsity parameter
        beta_col: Column-side sparsity parameter
        sparsity: Sparsifier settings
        sparse: False gives the dense (unselected) penalty
        training: Soft-threshold uses the smooth mask when True, the hard mask otherwise

    Returns:
        (loss averaged over N^2, selected fraction of entries)
    """
    n_sq = float(residual_matrix.values.numel())
    if not sparse or sparsity.sparsifier == "none":
        return dense_loss(residual_matrix, average=True), 1.0

    if sparsity.sparsifier == "top-k":
        mask = topk_mask(residual_matrix, sparsity.top_k)
        return dense_loss(residual_matrix, mask, average=True), float(mask.sum().item()) / n_sq

    if sparsity.sparsifier == "l1":
        l1 = residual_matrix.values.sum() / n_sq
        return dense_loss(residual_matrix, average=True) + sparsity.l1_lambda * l1, 1.0

    thresholds = soft_thresholds(conditional_probabilities(residual_matrix), beta_row, beta_col)
    hard = hard_mask(residual_matrix, thresholds, sparsity.threshold_space)
    if training:
        weights = smooth_mask(residual_matrix, thresholds, sparsity.temperature, sparsity.threshold_space)
    else:
        weights = hard.values
    return dense_loss(residual_matrix, weights, average=True), hard.density


def total_loss(
    images: LocalBatch,
    texts: LocalBatch,
    betas: Betas,
    weights: LossWeights,
    dim_align: DimAlignConfig,
    sparsity: SparsityConfig,
    negatives: NegativeIndices | None = None,
    seed: int | np.random.Generator = 0,
    negative_clip: float = DEFAULT_NEGATIVE_CLIP,
    training: bool = True,
    generator: torch.Generator | None = None,
) -> LossBreakdown:
    """
    Combined objective over a batch of N matched pairs.

    Args:
        images: Projected image locals (N instances)
        texts: Projected text locals, index-aligned
        betas: Sparsity parameters
        weights: Margin and term weights
        dim_align: Dimension-alignment settings
        sparsity: Spatial selection settings
        negatives: Fixed negatives; mined from the current scores when None
        seed: Seed or Generator for mining
        negative_clip: Weight-ratio cap of the negative sampler
        training: Smooth masks when True, hard masks otherwise
        generator: Torch RNG for the resample pairing mode

    Returns:
        LossBreakdown
    """
    if images.size != texts.size:
        raise UsageError(f"total_loss: {images.size} images but {texts.size} texts")

    similarity = pairwise_similarity(images, texts)
    if negatives is None:
        negatives = mine_negatives(similarity, images.d, seed, negative_clip)
    loc = batch_triplet_loss(similarity, negatives, weights.margin_alpha)

    bank = build_dimension_bank(images, texts, dim_align.pairing, dim_align.resample_k, generator)
    dim = dim_align_loss(correlation_matrix(bank), dim_align.variant)

    image_globals, text_globals = paired_globals(images, texts)
    inter_residual = residual(inter_distance(image_globals, text_globals))
    intra_residual = residual(intra_distance(image_globals, text_globals))
    inter, density_inter = spatial_term(
        inter_residual, betas.inter_row, betas.inter_col, sparsity, sparsity.sparse_inter, training
    )
    intra, density_intra = spatial_term(
        intra_residual, betas.intra_row, betas.intra_col, sparsity, sparsity.sparse_intra, training
    )

    total = loc
    if weights.w_dim > 0:
        total = total + weights.w_dim * dim
    if weights.w_inter > 0:
        total = total + weights.w_inter * inter
    if weights.w_intra > 0:
        total = total + weights.w_intra * intra

    return LossBreakdown(total, loc, dim, inter, intra, density_inter, density_intra)
