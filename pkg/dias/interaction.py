"""
Local embedding interaction and pooling.

Each region attends over the words of a text (and each word over the regions
of an image) with clamped-cosine weights; the attended vectors are mean-pooled
into a normalized global embedding. The image-text score is the cosine between
the two pooled sides.
"""

import logging
from dataclasses import dataclass

import torch

from dias.embedding import (
    GlobalEmbedding,
    LocalBatch,
    LocalEmbeddingSet,
    Modality,
    cosine,
    cosine_matrix,
    l2_normalize,
)
from dias.errors import UsageError
from dias.utils import EPS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttentionRecord:
    """Clamped similarities and the attended (updated) query vectors."""

    source_modality: Modality
    similarity: torch.Tensor  # (n_query x n_context), entries >= 0
    updated_vectors: torch.Tensor  # (n_query x d)


def aggregate_local(query: LocalEmbeddingSet, context: LocalEmbeddingSet) -> AttentionRecord:
    """
    Update every query vector as the similarity-weighted mean of the context rows.

    Args:
        query: Local embeddings being updated
        context: Local embeddings of the other modality

    Returns:
        AttentionRecord; rows whose weights all clamp to 0 become zero vectors
    """
    if query.d != context.d:
        raise UsageError(f"aggregate_local: query d={query.d} but context d={context.d}")
    s = cosine_matrix(query.vectors, context.vectors).clamp(min=0.0)
    updated = (s @ context.vectors) / (s.sum(dim=1, keepdim=True) + EPS)
    return AttentionRecord(query.modality, s, updated)


def pool(
    updated: torch.Tensor,
    instance_id: int = 0,
    modality: Modality = Modality.IMAGE,
) -> GlobalEmbedding:
    """Column-wise mean of the rows, L2-normalized."""
    if updated.ndim != 2 or updated.shape[0] < 1:
        raise UsageError("pool: expected a (count x d) matrix with count >= 1")
    return GlobalEmbedding(instance_id, modality, l2_normalize(updated.mean(dim=0)))


def masked_mean(vectors: torch.Tensor, mask: torch.Tensor, dim: int) -> torch.Tensor:
    """Mean over `dim` counting only rows where mask is True."""
    weights = mask.to(vectors.dtype)
    total = (vectors * weights.unsqueeze(-1)).sum(dim=dim)
    return total / weights.sum(dim=dim).clamp(min=1.0).unsqueeze(-1)


def paired_globals(images: LocalBatch, texts: LocalBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Global embeddings of matched pairs, each side attending over its partner.

    Args:
        images: Padded image locals (N instances)
        texts: Padded text locals, index-aligned with images

    Returns:
        (image_globals, text_globals), each (N x d) with unit-norm rows
    """
    if images.size != texts.size:
        raise UsageError(f"paired_globals: {images.size} images but {texts.size} texts")
    if images.d != texts.d:
        raise UsageError(f"paired_globals: image d={images.d} but text d={texts.d}")

    v, t = images.vectors, texts.vectors
    pair_mask = images.mask.unsqueeze(2) & texts.mask.unsqueeze(1)
    s = torch.einsum("nrd,nwd->nrw", l2_normalize(v), l2_normalize(t)).clamp(min=0.0)
    s = s * pair_mask.to(s.dtype)

    v_hat = torch.einsum("nrw,nwd->nrd", s, t) / (s.sum(dim=2, keepdim=True) + EPS)
    t_hat = torch.einsum("nrw,nrd->nwd", s, v) / (s.sum(dim=1).unsqueeze(-1) + EPS)

    image_globals = l2_normalize(masked_mean(v_hat, images.mask, dim=1))
    text_globals = l2_normalize(masked_mean(t_hat, texts.mask, dim=1))
    return image_globals, text_globals


def _pairwise_block(images: LocalBatch, texts: LocalBatch) -> torch.Tensor:
    v, t = images.vectors, texts.vectors
    pair_mask = images.mask[:, None, :, None] & texts.mask[None, :, None, :]
    s = torch.einsum("ird,jwd->ijrw", l2_normalize(v), l2_normalize(t)).clamp(min=0.0)
    s = s * pair_mask.to(s.dtype)

    # (i, j, r, d): regions of image i attending over words of text j
    v_hat = torch.einsum("ijrw,jwd->ijrd", s, t) / (s.sum(dim=3, keepdim=True) + EPS)
    # (i, j, w, d): words of text j attending over regions of image i
    t_hat = torch.einsum("ijrw,ird->ijwd", s, v) / (s.sum(dim=2).unsqueeze(-1) + EPS)

    image_side = l2_normalize(masked_mean(v_hat, images.mask[:, None, :], dim=2))
    text_side = l2_normalize(masked_mean(t_hat, texts.mask[None, :, :], dim=2))
    return cosine(image_side, text_side)


def pairwise_similarity(
    images: LocalBatch,
    texts: LocalBatch,
    chunk_size: int | None = None,
) -> torch.Tensor:
    """
    Local-matching score for every (image, text) combination.

    Args:
        images: Padded image locals
        texts: Padded text locals
        chunk_size: Images per block (bounds memory); None means one block

    Returns:
        (N_img x N_txt) score matrix in [-1, 1]
    """
    if images.d != texts.d:
        raise UsageError(f"pairwise_similarity: image d={images.d} but text d={texts.d}")
    if chunk_size is None or chunk_size >= images.size:
        return _pairwise_block(images, texts)

    blocks = []
    for start in range(0, images.size, chunk_size):
        indices = range(start, min(start + chunk_size, images.size))
        blocks.append(_pairwise_block(images.select(indices), texts))
    return torch.cat(blocks, dim=0)
