"""
Dimension information alignment.

Dimension vectors collect one coordinate of every paired sample in a batch.
Correlating image dimension i with text dimension j gives the d x d matrix C;
the regularizer rewards a dominant diagonal and penalizes off-diagonal mass.
Corresponding dimensions are assumed to share the same column index.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import torch

from dias.embedding import LocalBatch, LocalEmbeddingSet, stack_sets
from dias.errors import UsageError
from dias.interaction import masked_mean
from dias.utils import EPS

logger = logging.getLogger(__name__)

# Centered rows below this norm (relative to the row scale) count as constant.
FLAT_ROW_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DimensionVectorBank:
    """Row i of each matrix holds dimension i across the N_s paired samples."""

    image_dim_vectors: torch.Tensor  # (d x N_s)
    text_dim_vectors: torch.Tensor  # (d x N_s)

    def __post_init__(self) -> None:
        if self.image_dim_vectors.shape[1] != self.text_dim_vectors.shape[1]:
            raise UsageError("Image and text dimension vectors must share the sample count")
        if self.image_dim_vectors.shape[1] < 2:
            raise UsageError("A dimension bank needs at least 2 paired samples")

    @property
    def num_samples(self) -> int:
        return int(self.image_dim_vectors.shape[1])


@dataclass(frozen=True)
class CorrelationMatrix:
    """Cross-modal dimension correlations c_ij in [-1, 1]."""

    values: torch.Tensor  # (d x d)
    diagnostics: tuple[str, ...] = field(default_factory=tuple)


def _as_batch(items: Sequence[LocalEmbeddingSet] | LocalBatch) -> LocalBatch:
    return items if isinstance(items, LocalBatch) else stack_sets(list(items))


def _resample(batch: LocalBatch, k: int, generator: torch.Generator | None) -> torch.Tensor:
    """Draw k local rows per instance (with replacement); returns (N*k x d)."""
    picks = torch.multinomial(batch.mask.to(batch.vectors.dtype), k, replacement=True, generator=generator)
    gathered = torch.gather(batch.vectors, 1, picks.unsqueeze(-1).expand(-1, -1, batch.d))
    return gathered.reshape(-1, batch.d)


def build_dimension_bank(
    images: Sequence[LocalEmbeddingSet] | LocalBatch,
    texts: Sequence[LocalEmbeddingSet] | LocalBatch,
    pairing: str = "paired-instance",
    resample_k: int = 4,
    generator: torch.Generator | None = None,
) -> DimensionVectorBank:
    """
    Collect paired samples and transpose them into dimension vectors.

    Args:
        images: Index-aligned image locals (N >= 2)
        texts: Index-aligned text locals
        pairing: "paired-instance" (mean-pool each instance) or "resample"
            (k random locals per instance per modality)
        resample_k: Locals drawn per instance in resample mode
        generator: Torch RNG for resample mode

    Returns:
        DimensionVectorBank with N (or N*k) paired samples
    """
    images = _as_batch(images)
    texts = _as_batch(texts)
    if images.size != texts.size:
        raise UsageError(f"build_dimension_bank: {images.size} images but {texts.size} texts")
    if images.size < 2:
        raise UsageError("build_dimension_bank needs at least 2 matched pairs")

    if pairing == "paired-instance":
        image_samples = masked_mean(images.vectors, images.mask, dim=1)
        text_samples = masked_mean(texts.vectors, texts.mask, dim=1)
    elif pairing == "resample":
        image_samples = _resample(images, resample_k, generator)
        text_samples = _resample(texts, resample_k, generator)
    else:
        raise UsageError(f"Unknown pairing mode: {pairing}")

    return DimensionVectorBank(image_samples.T, text_samples.T)


def _center(rows: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    centered = rows - rows.mean(dim=1, keepdim=True)
    scale = 1.0 + rows.detach().abs().amax(dim=1)
    flat = torch.linalg.vector_norm(centered.detach(), dim=1) <= FLAT_ROW_TOLERANCE * scale
    centered = torch.where(flat.unsqueeze(1), torch.zeros_like(centered), centered)
    return centered, flat


def correlation_matrix(bank: DimensionVectorBank) -> CorrelationMatrix:
    """
    Pearson correlation of every image dimension with every text dimension.

    Args:
        bank: Paired dimension vectors

    Returns:
        CorrelationMatrix; constant rows give zero entries and a diagnostic
    """
    image_centered, image_flat = _center(bank.image_dim_vectors)
    text_centered, text_flat = _center(bank.text_dim_vectors)

    image_norm = torch.linalg.vector_norm(image_centered, dim=1) + EPS
    text_norm = torch.linalg.vector_norm(text_centered, dim=1) + EPS
    values = (image_centered @ text_centered.T) / (image_norm.unsqueeze(1) * text_norm.unsqueeze(0))

    diagnostics = []
    for i in torch.nonzero(image_flat).flatten().tolist():
        diagnostics.append(f"image dimension {i} has zero variance")
    for j in torch.nonzero(text_flat).flatten().tolist():
        diagnostics.append(f"text dimension {j} has zero variance")
    if diagnostics:
        logger.warning(f"Correlation matrix: {len(diagnostics)} zero-variance dimensions")

    return CorrelationMatrix(values, tuple(diagnostics))


def dim_align_loss(C: CorrelationMatrix | torch.Tensor, variant: str = "normalized") -> torch.Tensor:
    """
    Dimension-alignment regularizer.

    naive:             -sum_i c_ii + sum_{i != j} c_ij
    normalized:        sum_i -(|c_ii| / sum_j |c_ij| + |c_ii| / sum_j |c_ji|)
    normalized-signed: as normalized with the signed c_ii in the numerators,
                       so anti-correlated corresponding dimensions are penalized

    Args:
        C: Correlation matrix (or raw square tensor)
        variant: "naive", "normalized" or "normalized-signed"

    Returns:
        Scalar loss tensor; both normalized forms are bounded below by -2d
    """
    values = C.values if isinstance(C, CorrelationMatrix) else C
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
        raise UsageError("dim_align_loss expects a non-empty square matrix")

    diag = torch.diagonal(values)
    if variant == "naive":
        return -diag.sum() + (values.sum() - diag.sum())
    if variant in ("normalized", "normalized-signed"):
        magnitude = values.abs()
        numerator = diag if variant == "normalized-signed" else diag.abs()
        row_mass = magnitude.sum(dim=1).clamp(min=EPS)
        col_mass = magnitude.sum(dim=0).clamp(min=EPS)
        return -(numerator / row_mass + numerator / col_mass).sum()
    raise UsageError(f"Unknown dim-align variant: {variant}")
