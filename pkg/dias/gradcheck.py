"""
Finite-difference gradient oracle.

Compares torch autograd gradients against central differences, one scalar
parameter entry at a time, at double precision.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping

import torch

from dias.utils import DTYPE

logger = logging.getLogger(__name__)

LossFn = Callable[[dict[str, torch.Tensor]], torch.Tensor]

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
DENOMINATOR_FLOOR = 1e-8
# Differences below this are central-difference round-off, not gradient error.
NOISE_FLOOR = 1e-9


@dataclass
class GradCheckReport:
    """Outcome of checking one named parameter."""

    parameter_name: str
    max_rel_error: float
    tolerance: float
    passed: bool
    max_abs_error: float = 0.0
    diagnostic: str | None = None

    def to_dict(self) -> dict:
        return {
            "parameter_name": self.parameter_name,
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "diagnostic": self.diagnostic,
        }


def relative_error(analytic: float, numeric: float) -> float:
    """|a - f| / max(1e-8, |a| + |f|), with round-off-sized differences counted as 0."""
    diff = abs(analytic - numeric)
    if diff <= NOISE_FLOOR:
        return 0.0
    return diff / max(DENOMINATOR_FLOOR, abs(analytic) + abs(numeric))


def _failure(name: str, tolerance: float, diagnostic: str) -> GradCheckReport:
    logger.warning(f"grad_check {name}: {diagnostic}")
    return GradCheckReport(name, math.inf, tolerance, False, math.inf, diagnostic)


def grad_check(
    loss_fn: LossFn,
    params: Mapping[str, torch.Tensor],
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> list[GradCheckReport]:
    """
    Check analytic gradients of a scalar loss against central differences.

    Args:
        loss_fn: Maps {name: tensor} to a scalar tensor
        params: Named parameter values (copied, never modified)
        step: Central-difference step
        tolerance: Maximum accepted relative error

    Returns:
        One GradCheckReport per named parameter
    """
    leaves = {name: value.detach().to(DTYPE).clone().requires_grad_(True) for name, value in params.items()}
    loss = loss_fn(leaves)
    if not bool(torch.isfinite(loss)):
        return [_failure(name, tolerance, f"non-finite loss {loss.item()} at base point") for name in leaves]

    names = list(leaves)
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
    else:
        # Loss does not depend on any parameter
        grads = (None,) * len(names)
    analytic = {
        name: (g if g is not None else torch.zeros_like(leaves[name])).detach()
        for name, g in zip(names, grads)
    }

    probe = {name: value.detach().clone() for name, value in leaves.items()}
    reports = []
    with torch.no_grad():
        for name in names:
            flat = probe[name].view(-1)
            flat_grad = analytic[name].reshape(-1)
            max_rel = 0.0
            max_abs = 0.0
            diagnostic = None
            for index in range(flat.numel()):
                original = flat[index].item()
                flat[index] = original + step
                plus = loss_fn(probe).item()
                flat[index] = original - step
                minus = loss_fn(probe).item()
                flat[index] = original

                if not (math.isfinite(plus) and math.isfinite(minus)):
                    diagnostic = f"non-finite loss probing {name}[{index}]"
                    max_rel = math.inf
                    max_abs = math.inf
                    break

                numeric = (plus - minus) / (2.0 * step)
                a = flat_grad[index].item()
                rel = relative_error(a, numeric)
                if rel > max_rel:
                    max_rel = rel
                    if rel > tolerance:
                        diagnostic = f"{name}[{index}]: analytic={a:.6e} numeric={numeric:.6e}"
                max_abs = max(max_abs, abs(a - numeric))

            passed = max_rel <= tolerance
            if not passed:
                logger.warning(f"grad_check {name} failed: {diagnostic}")
            reports.append(GradCheckReport(name, max_rel, tolerance, passed, max_abs, diagnostic))

    return reports
