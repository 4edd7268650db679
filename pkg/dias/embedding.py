"""
Embedding data model and similarity primitives.

Local embeddings are (count x d) float64 tensors. Batches of instances with
different counts are padded to a common length and carry a boolean row mask.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import torch

from dias.errors import UsageError
from dias.utils import DTYPE, EPS

logger = logging.getLogger(__name__)


class Modality(str, Enum):
    IMAGE = "image"
    TEXT = "text"


def as_tensor(values: torch.Tensor | np.ndarray | Sequence) -> torch.Tensor:
    """Convert to a float64 tensor without copying tensors already in float64."""
    if isinstance(values, torch.Tensor):
        return values if values.dtype == DTYPE else values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


def l2_normalize(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Divide by the L2 norm along `dim` plus EPS."""
    return x / (torch.linalg.vector_norm(x, dim=dim, keepdim=True) + EPS)


@dataclass(frozen=True)
class LocalEmbeddingSet:
    """Region (image) or word (text) embeddings of one instance."""

    instance_id: int
    modality: Modality
    vectors: torch.Tensor

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise UsageError(
                f"{self.modality.value} instance {self.instance_id}: "
                f"expected a (count x d) matrix with count >= 1, got {tuple(self.vectors.shape)}"
            )
        if not bool(torch.isfinite(self.vectors).all()):
            raise UsageError(f"{self.modality.value} instance {self.instance_id} has non-finite entries")

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])


@dataclass(frozen=True)
class GlobalEmbedding:
    """Pooled, normalized embedding of one instance."""

    instance_id: int
    modality: Modality
    vector: torch.Tensor


@dataclass
class ProjectionParams:
    """Learnable affine heads mapping raw features into the shared d-space."""

    weight_image: torch.Tensor
    bias_image: torch.Tensor
    weight_text: torch.Tensor
    bias_text: torch.Tensor

    @classmethod
    def init(
        cls,
        d_in_image: int,
        d_in_text: int,
        d: int,
        generator: torch.Generator | None = None,
    ) -> "ProjectionParams":
        """
        Draw Xavier-style random weights and zero biases.

        Args:
            d_in_image: Raw image feature dimensionality
            d_in_text: Raw text feature dimensionality
            d: Shared embedding dimensionality
            generator: Torch RNG for reproducible draws

        Returns:
            ProjectionParams
        """
        scale_v = (2.0 / (d_in_image + d)) ** 0.5
        scale_t = (2.0 / (d_in_text + d)) ** 0.5
        return cls(
            weight_image=torch.randn(d_in_image, d, generator=generator, dtype=DTYPE) * scale_v,
            bias_image=torch.zeros(d, dtype=DTYPE),
            weight_text=torch.randn(d_in_text, d, generator=generator, dtype=DTYPE) * scale_t,
            bias_text=torch.zeros(d, dtype=DTYPE),
        )

    @classmethod
    def identity(cls, d: int) -> "ProjectionParams":
        eye = torch.eye(d, dtype=DTYPE)
        zero = torch.zeros(d, dtype=DTYPE)
        return cls(eye.clone(), zero.clone(), eye.clone(), zero.clone())

    @property
    def d(self) -> int:
        return int(self.weight_image.shape[1])

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {
            "weight_image": self.weight_image,
            "bias_image": self.bias_image,
            "weight_text": self.weight_text,
            "bias_text": self.bias_text,
        }

    def requires_grad_(self, flag: bool = True) -> "ProjectionParams":
        for tensor in self.named_tensors().values():
            tensor.requires_grad_(flag)
        return self

    def detach(self) -> "ProjectionParams":
        return ProjectionParams(**{k: v.detach().clone() for k, v in self.named_tensors().items()})

    def for_modality(self, modality: Modality) -> tuple[torch.Tensor, torch.Tensor]:
        if modality == Modality.IMAGE:
            return self.weight_image, self.bias_image
        return self.weight_text, self.bias_text

    def validate(self) -> None:
        if self.weight_image.shape[1] != self.weight_text.shape[1]:
            raise UsageError("Image and text projections must share output dimensionality")
        for name, tensor in self.named_tensors().items():
            if not bool(torch.isfinite(tensor).all()):
                raise UsageError(f"Projection parameter {name} has non-finite entries")


@dataclass(frozen=True)
class LocalBatch:
    """Padded stack of local embedding sets of one modality."""

    modality: Modality
    vectors: torch.Tensor  # (B, max_count, d)
    mask: torch.Tensor  # (B, max_count) bool
    instance_ids: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def d(self) -> int:
        return int(self.vectors.shape[2])

    def counts(self) -> torch.Tensor:
        return self.mask.sum(dim=1)

    def select(self, indices: Sequence[int]) -> "LocalBatch":
        index = torch.as_tensor(list(indices), dtype=torch.long)
        return LocalBatch(
            modality=self.modality,
            vectors=self.vectors.index_select(0, index),
            mask=self.mask.index_select(0, index),
            instance_ids=tuple(self.instance_ids[i] for i in index.tolist()),
        )

    def to_sets(self) -> list[LocalEmbeddingSet]:
        return [
            LocalEmbeddingSet(self.instance_ids[b], self.modality, self.vectors[b][self.mask[b]])
            for b in range(self.size)
        ]


def stack_sets(sets: Sequence[LocalEmbeddingSet]) -> LocalBatch:
    """
    Pad a list of same-modality local embedding sets into one batch.

    Args:
        sets: Non-empty list sharing modality and d

    Returns:
        LocalBatch with zero padding and a row mask
    """
    if not sets:
        raise UsageError("Cannot stack an empty list of embedding sets")
    d = sets[0].d
    modality = sets[0].modality
    if any(s.d != d for s in sets):
        raise UsageError("All embedding sets in a batch must share d")
    if any(s.modality != modality for s in sets):
        raise UsageError("All embedding sets in a batch must share modality")

    max_count = max(s.count for s in sets)
    rows = []
    mask = torch.zeros(len(sets), max_count, dtype=torch.bool)
    for b, s in enumerate(sets):
        pad = s.vectors.new_zeros(max_count - s.count, d)
        rows.append(torch.cat([s.vectors, pad], dim=0))
        mask[b, : s.count] = True
    return LocalBatch(modality, torch.stack(rows), mask, tuple(s.instance_id for s in sets))


def pad_raw(arrays: Sequence[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad raw (count x d_in) feature arrays into a float64 tensor plus row mask."""
    max_count = max(a.shape[0] for a in arrays)
    d_in = arrays[0].shape[1]
    out = np.zeros((len(arrays), max_count, d_in), dtype=np.float64)
    mask = np.zeros((len(arrays), max_count), dtype=bool)
    for b, a in enumerate(arrays):
        out[b, : a.shape[0]] = a
        mask[b, : a.shape[0]] = True
    return torch.from_numpy(out), torch.from_numpy(mask)


def cosine(u: torch.Tensor | Sequence[float], v: torch.Tensor | Sequence[float]) -> torch.Tensor:
    """
    Cosine similarity with EPS added to each norm.

    Args:
        u: Vector
        v: Vector of the same length

    Returns:
        Scalar tensor in [-1, 1]; 0 when either vector is zero
    """
    u = as_tensor(u)
    v = as_tensor(v)
    if u.shape != v.shape:
        raise UsageError(f"cosine: mismatched lengths {tuple(u.shape)} vs {tuple(v.shape)}")
    return (u * v).sum(-1) / (
        (torch.linalg.vector_norm(u, dim=-1) + EPS) * (torch.linalg.vector_norm(v, dim=-1) + EPS)
    )


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """All-pairs cosine between rows of a (n x d) and rows of b (m x d)."""
    if a.shape[-1] != b.shape[-1]:
        raise UsageError(f"cosine_matrix: mismatched d {a.shape[-1]} vs {b.shape[-1]}")
    return l2_normalize(a) @ l2_normalize(b).transpose(-1, -2)


def project_rows(raw: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Affine map on the last axis followed by row L2 normalization."""
    if raw.shape[-1] != weight.shape[0]:
        raise UsageError(
            f"Raw feature width {raw.shape[-1]} does not match projection input {weight.shape[0]}"
        )
    return l2_normalize(raw @ weight + bias)


def project(
    raw: torch.Tensor | np.ndarray,
    params: ProjectionParams,
    modality: Modality,
    instance_id: int = 0,
) -> LocalEmbeddingSet:
    """
    Project one instance's raw local features into the shared space.

    Args:
        raw: (count x d_in) raw features
        params: Projection parameters
        modality: Selects the image or text head
        instance_id: Identifier carried on the result

    Returns:
        LocalEmbeddingSet with unit-norm rows
    """
    weight, bias = params.for_modality(modality)
    return LocalEmbeddingSet(instance_id, modality, project_rows(as_tensor(raw), weight, bias))


def project_batch(
    raw: torch.Tensor,
    mask: torch.Tensor,
    params: ProjectionParams,
    modality: Modality,
    instance_ids: Sequence[int],
) -> LocalBatch:
    """Project a padded raw batch; padded rows stay exactly zero."""
    weight, bias = params.for_modality(modality)
    vectors = project_rows(raw, weight, bias) * mask.unsqueeze(-1)
    return LocalBatch(modality, vectors, mask, tuple(instance_ids))
