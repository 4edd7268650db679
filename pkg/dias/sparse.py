"""
Sparse correlation selection for the spatial constraints.

Residuals become conditional probabilities p = sigmoid(-residual). Each row
and column gets a soft threshold kappa = mu + beta * theta from the mean and
population standard deviation of its probabilities. An entry is kept when its
residual exceeds the larger of its row and column thresholds.

The comparison of a raw residual against a probability-valued threshold is
kept literal in the default "magnitude" space; "probability" space compares
probabilities against mu - beta * theta instead.
"""

import logging
from dataclasses import dataclass

import torch

from dias.errors import UsageError
from dias.spatial import SpatialResidualMatrix

logger = logging.getLogger(__name__)

MAGNITUDE = "magnitude"
PROBABILITY = "probability"
DEFAULT_TEMPERATURE = 0.1


@dataclass(frozen=True)
class ConditionalProbabilityMatrix:
    """p_ij = sigmoid(-residual_ij), every entry in (0, 0.5]."""

    values: torch.Tensor


@dataclass(frozen=True)
class ThresholdSet:
    """Row (image-side) and column (text-side) soft thresholds."""

    row_thresholds: torch.Tensor
    col_thresholds: torch.Tensor
    beta_row: torch.Tensor
    beta_col: torch.Tensor
    row_mean: torch.Tensor
    row_std: torch.Tensor
    col_mean: torch.Tensor
    col_std: torch.Tensor


@dataclass(frozen=True)
class SelectionMask:
    """0/1 selection of residual entries."""

    values: torch.Tensor
    selected_count: int
    space: str

    @property
    def density(self) -> float:
        return self.selected_count / float(self.values.numel())


def conditional_probabilities(residual: SpatialResidualMatrix | torch.Tensor) -> ConditionalProbabilityMatrix:
    """Elementwise p = 1 / (1 + exp(residual))."""
    values = residual.values if isinstance(residual, SpatialResidualMatrix) else residual
    return ConditionalProbabilityMatrix(torch.sigmoid(-values))


def population_std(values: torch.Tensor, dim: int) -> torch.Tensor:
    """Divide-by-N standard deviation with a zero (not NaN) gradient on constant slices."""
    variance = values.var(dim=dim, unbiased=False)
    positive = variance > 0
    safe = torch.where(positive, variance, torch.ones_like(variance))
    return torch.where(positive, torch.sqrt(safe), torch.zeros_like(variance))


def soft_thresholds(
    P: ConditionalProbabilityMatrix,
    beta_row: torch.Tensor | float,
    beta_col: torch.Tensor | float,
) -> ThresholdSet:
    """
    Per-row and per-column thresholds kappa = mu + beta * theta.

    Args:
        P: Conditional probabilities (N x N, N >= 2)
        beta_row: Sparsity parameter shared by all rows
        beta_col: Sparsity parameter shared by all columns

    Returns:
        ThresholdSet carrying the statistics used
    """
    values = P.values
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 2:
        raise UsageError("soft_thresholds needs a square matrix with N >= 2")
    beta_row = torch.as_tensor(beta_row, dtype=values.dtype)
    beta_col = torch.as_tensor(beta_col, dtype=values.dtype)

    row_mean = values.mean(dim=1)
    row_std = population_std(values, dim=1)
    col_mean = values.mean(dim=0)
    col_std = population_std(values, dim=0)
    return ThresholdSet(
        row_thresholds=row_mean + beta_row * row_std,
        col_thresholds=col_mean + beta_col * col_std,
        beta_row=beta_row,
        beta_col=beta_col,
        row_mean=row_mean,
        row_std=row_std,
        col_mean=col_mean,
        col_std=col_std,
    )


def _magnitude_bound(thresholds: ThresholdSet) -> torch.Tensor:
    return torch.maximum(thresholds.row_thresholds.unsqueeze(1), thresholds.col_thresholds.unsqueeze(0))


def _probability_bound(thresholds: ThresholdSet) -> torch.Tensor:
    row = thresholds.row_mean - thresholds.beta_row * thresholds.row_std
    col = thresholds.col_mean - thresholds.beta_col * thresholds.col_std
    return torch.minimum(row.unsqueeze(1), col.unsqueeze(0))


def hard_mask(
    residual: SpatialResidualMatrix,
    thresholds: ThresholdSet,
    space: str = MAGNITUDE,
) -> SelectionMask:
    """
    Binary selection of strongly related entries.

    Args:
        residual: Residual matrix
        thresholds: Soft thresholds computed from its probabilities
        space: "magnitude" (residual > max(kappa_row, kappa_col)) or
            "probability" (p < min(mu_row - beta*theta_row, mu_col - beta*theta_col))

    Returns:
        SelectionMask
    """
    values = residual.values.detach()
    n = values.shape[0]
    if thresholds.row_thresholds.shape[0] != n or thresholds.col_thresholds.shape[0] != n:
        raise UsageError("hard_mask: threshold sizes do not match the residual matrix")

    if space == MAGNITUDE:
        selected = values > _magnitude_bound(thresholds).detach()
    elif space == PROBABILITY:
        probabilities = torch.sigmoid(-values)
        selected = probabilities < _probability_bound(thresholds).detach()
    else:
        raise UsageError(f"Unknown threshold space: {space}")

    mask = selected.to(values.dtype)
    return SelectionMask(mask, int(selected.sum().item()), space)


def smooth_mask(
    residual: SpatialResidualMatrix,
    thresholds: ThresholdSet,
    temperature: float = DEFAULT_TEMPERATURE,
    space: str = MAGNITUDE,
) -> torch.Tensor:
    """
    Differentiable relaxation of hard_mask used inside the training loss.

    Args:
        residual: Residual matrix
        thresholds: Soft thresholds (gradients flow to beta through them)
        temperature: Sigmoid temperature (> 0)
        space: Same meaning as in hard_mask

    Returns:
        (N x N) tensor with entries in (0, 1)
    """
    if temperature <= 0:
        raise UsageError("smooth_mask: temperature must be > 0")
    values = residual.values
    if space == MAGNITUDE:
        return torch.sigmoid((values - _magnitude_bound(thresholds)) / temperature)
    if space == PROBABILITY:
        return torch.sigmoid((_probability_bound(thresholds) - torch.sigmoid(-values)) / temperature)
    raise UsageError(f"Unknown threshold space: {space}")


def select(
    residual: SpatialResidualMatrix,
    beta_row: torch.Tensor | float,
    beta_col: torch.Tensor | float,
    space: str = MAGNITUDE,
) -> tuple[ThresholdSet, SelectionMask]:
    """Thresholds and hard mask for one residual matrix."""
    thresholds = soft_thresholds(conditional_probabilities(residual), beta_row, beta_col)
    return thresholds, hard_mask(residual, thresholds, space)
