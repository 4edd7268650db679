"""
Experiment harnesses: gradient suite, ablations, sparsifier comparison and
hyperparameter sweeps.

Every harness trains through dias.train and reports validation rSum, so the
rows of one run are directly comparable.
"""

import dataclasses
import logging
from typing import Callable, Sequence

import numpy as np
import torch

from dias.config import SECTIONS, DiasConfig, LossWeights, SparsityConfig, config_from_dict
from dias.corpus import Corpus
from dias.dim_align import build_dimension_bank, correlation_matrix, dim_align_loss
from dias.embedding import Modality, ProjectionParams, project_batch
from dias.errors import UsageError
from dias.gradcheck import GradCheckReport, LossFn, grad_check
from dias.interaction import paired_globals, pairwise_similarity
from dias.objective import Betas, NegativeIndices, batch_triplet_loss, mine_negatives, spatial_term, total_loss
from dias.spatial import dense_loss, inter_distance, intra_distance, residual
from dias.train import train
from dias.utils import DTYPE

logger = logging.getLogger(__name__)

GRADCHECK_PAIRS = (2, 4, 6)
GRADCHECK_DIMS = (4, 8)
SPARSIFIER_ROWS = ("soft-threshold", "top-k", "l1")


def _set_weights(**overrides: float) -> Callable[[DiasConfig], DiasConfig]:
    def apply(config: DiasConfig) -> DiasConfig:
        return dataclasses.replace(config, weights=dataclasses.replace(config.weights, **overrides))

    return apply


def _set_sparsity(**overrides: bool) -> Callable[[DiasConfig], DiasConfig]:
    def apply(config: DiasConfig) -> DiasConfig:
        return dataclasses.replace(config, sparsity=dataclasses.replace(config.sparsity, **overrides))

    return apply


VARIANTS: dict[str, Callable[[DiasConfig], DiasConfig]] = {
    "full": lambda config: config,
    "w/o DIA": _set_weights(w_dim=0.0),
    "w/o L_x": _set_weights(w_inter=0.0),
    "w/o L_yz": _set_weights(w_intra=0.0),
    "w/o sparse L_x": _set_sparsity(sparse_inter=False),
    "w/o sparse L_yz": _set_sparsity(sparse_intra=False),
    "w/o sparsity": _set_sparsity(sparse_inter=False, sparse_intra=False),
    "baseline": _set_weights(w_dim=0.0, w_inter=0.0, w_intra=0.0),
}

ABLATION_VARIANTS = tuple(name for name in VARIANTS if name != "baseline")


def apply_variant(config: DiasConfig, name: str) -> DiasConfig:
    """Configuration for a named ablation variant."""
    if name not in VARIANTS:
        raise UsageError(f"Unknown variant '{name}', expected one of {list(VARIANTS)}")
    return VARIANTS[name](config).validate()


# ---------------------------------------------------------------------------
# Gradient suite
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class GradientFixture:
    """Small random batch kept away from the clamp and hinge kinks."""

    raw_image: torch.Tensor
    mask_image: torch.Tensor
    raw_text: torch.Tensor
    mask_text: torch.Tensor
    params: dict[str, torch.Tensor]
    negatives: NegativeIndices

    def batches(self, params: dict[str, torch.Tensor]):
        projection = ProjectionParams(
            params["weight_image"], params["bias_image"], params["weight_text"], params["bias_text"]
        )
        ids = list(range(self.raw_image.shape[0]))
        images = project_batch(self.raw_image, self.mask_image, projection, Modality.IMAGE, ids)
        texts = project_batch(self.raw_text, self.mask_text, projection, Modality.TEXT, ids)
        return images, texts


def gradient_fixture(pairs: int, dim: int, seed: int = 0) -> GradientFixture:
    """
    Random batch for finite-difference checks.

    Raw features share a positive offset and the projections start near the
    identity, so every local cosine stays well above the attention clamp.
    """
    if pairs < 2:
        raise UsageError("gradient_fixture needs at least 2 pairs")
    generator = torch.Generator().manual_seed(seed)

    def raw(max_rows: int) -> tuple[torch.Tensor, torch.Tensor]:
        values = 1.0 + 0.3 * torch.randn(pairs, max_rows, dim, generator=generator, dtype=DTYPE)
        counts = torch.randint(2, max_rows + 1, (pairs,), generator=generator)
        mask = torch.arange(max_rows).unsqueeze(0) < counts.unsqueeze(1)
        return values * mask.unsqueeze(-1), mask

    raw_image, mask_image = raw(3)
    raw_text, mask_text = raw(4)
    eye = torch.eye(dim, dtype=DTYPE)
    params = {
        "weight_image": eye + 0.1 * torch.randn(dim, dim, generator=generator, dtype=DTYPE),
        "bias_image": 0.05 * torch.randn(dim, generator=generator, dtype=DTYPE),
        "weight_text": eye + 0.1 * torch.randn(dim, dim, generator=generator, dtype=DTYPE),
        "bias_text": 0.05 * torch.randn(dim, generator=generator, dtype=DTYPE),
        # Distinct row/column betas keep max(kappa_row, kappa_col) off its tie
        "beta_inter_row": torch.tensor(0.8, dtype=DTYPE),
        "beta_inter_col": torch.tensor(1.3, dtype=DTYPE),
        "beta_intra_row": torch.tensor(0.7, dtype=DTYPE),
        "beta_intra_col": torch.tensor(1.2, dtype=DTYPE),
    }
    fixture = GradientFixture(raw_image, mask_image, raw_text, mask_text, params, None)  # type: ignore[arg-type]
    with torch.no_grad():
        images, texts = fixture.batches(params)
        fixture.negatives = mine_negatives(pairwise_similarity(images, texts), dim, seed)
    return fixture


def _betas(params: dict[str, torch.Tensor]) -> Betas:
    return Betas(
        params["beta_inter_row"], params["beta_inter_col"], params["beta_intra_row"], params["beta_intra_col"]
    )


def loss_terms(fixture: GradientFixture) -> dict[str, tuple[LossFn, tuple[str, ...]]]:
    """Every differentiable loss term with the parameter names it depends on."""
    projection_names = ("weight_image", "bias_image", "weight_text", "bias_text")
    inter_names = projection_names + ("beta_inter_row", "beta_inter_col")
    intra_names = projection_names + ("beta_intra_row", "beta_intra_col")
    weights = LossWeights()
    sparsity = SparsityConfig()

    def triplet(params):
        images, texts = fixture.batches(params)
        return batch_triplet_loss(pairwise_similarity(images, texts), fixture.negatives, weights.margin_alpha)

    def dim_variant(variant: str) -> LossFn:
        def loss(params):
            images, texts = fixture.batches(params)
            return dim_align_loss(correlation_matrix(build_dimension_bank(images, texts)), variant)

        return loss

    def inter_residual(params):
        return residual(inter_distance(*paired_globals(*fixture.batches(params))))

    def intra_residual(params):
        return residual(intra_distance(*paired_globals(*fixture.batches(params))))

    def inter_masked(params):
        return spatial_term(inter_residual(params), params["beta_inter_row"], params["beta_inter_col"], sparsity)[0]

    def intra_masked(params):
        return spatial_term(intra_residual(params), params["beta_intra_row"], params["beta_intra_col"], sparsity)[0]

    def total(params):
        images, texts = fixture.batches(params)
        return total_loss(
            images, texts, _betas(params), weights, DiasConfig().dim_align, sparsity, negatives=fixture.negatives
        ).total

    return {
        "triplet": (triplet, projection_names),
        "dim_naive": (dim_variant("naive"), projection_names),
        "dim_normalized": (dim_variant("normalized"), projection_names),
        "dim_normalized_signed": (dim_variant("normalized-signed"), projection_names),
        "inter_dense": (lambda params: dense_loss(inter_residual(params)), projection_names),
        "intra_dense": (lambda params: dense_loss(intra_residual(params)), projection_names),
        "inter_masked": (inter_masked, inter_names),
        "intra_masked": (intra_masked, intra_names),
        "total": (total, tuple(fixture.params)),
    }


def gradient_suite(
    pairs: Sequence[int] = GRADCHECK_PAIRS,
    dims: Sequence[int] = GRADCHECK_DIMS,
    seed: int = 0,
    tolerance: float = 1e-4,
) -> list[dict]:
    """
    Run grad_check on every loss term over a grid of batch sizes and widths.

    Returns:
        One record per (term, pairs, dim, parameter)
    """
    records = []
    for n in pairs:
        for d in dims:
            fixture = gradient_fixture(n, d, seed)
            for term, (loss_fn, names) in loss_terms(fixture).items():
                reports: list[GradCheckReport] = grad_check(
                    loss_fn, {name: fixture.params[name] for name in names}, tolerance=tolerance
                )
                for report in reports:
                    records.append({"term": term, "pairs": n, "dim": d, **report.to_dict()})
                failed = [r.parameter_name for r in reports if not r.passed]
                status = "ok" if not failed else f"FAILED {failed}"
                logger.info(f"grad_check {term} N={n} d={d}: {status}")
    return records


# ---------------------------------------------------------------------------
# Training harnesses
# ---------------------------------------------------------------------------


def run_config(config: DiasConfig, corpus: Corpus) -> dict:
    """Train once and return the final validation report as a flat record."""
    result = train(config, corpus)
    return result.final_report.to_dict()


def ablate(
    config: DiasConfig,
    corpus: Corpus,
    seeds: Sequence[int] = (0, 1, 2),
    variants: Sequence[str] = ABLATION_VARIANTS,
) -> tuple[list[dict], list[dict]]:
    """
    Train every variant under every seed.

    Returns:
        (per-run rows, per-variant mean rSum rows)
    """
    rows = []
    for name in variants:
        for seed in seeds:
            logger.info(f"Ablation '{name}' seed={seed}")
            report = run_config(apply_variant(config.with_seed(seed), name), corpus)
            rows.append({"variant": name, "seed": seed, "rsum": report["rsum"]})

    summary = [
        {"variant": name, "mean_rsum": float(np.mean([r["rsum"] for r in rows if r["variant"] == name]))}
        for name in variants
    ]
    return rows, summary


def compare_sparsifiers(config: DiasConfig, corpus: Corpus) -> list[dict]:
    """Soft-threshold, Top-k and L1 selection under otherwise identical settings."""
    rows = []
    for sparsifier in SPARSIFIER_ROWS:
        variant = dataclasses.replace(config, sparsity=dataclasses.replace(config.sparsity, sparsifier=sparsifier))
        logger.info(f"Sparsifier '{sparsifier}'")
        report = run_config(variant.validate(), corpus)
        rows.append(
            {"sparsifier": sparsifier, "rsum": report["rsum"], "i2t_r1": report["i2t_r1"], "t2i_r1": report["t2i_r1"]}
        )
    return rows


def resolve_param(config: DiasConfig, param: str) -> tuple[str, str]:
    """Map 'key' or 'section.key' to its (section, key)."""
    if "." in param:
        section, key = param.split(".", 1)
        if section in SECTIONS and hasattr(getattr(config, section), key):
            return section, key
        raise UsageError(f"Unknown parameter: {param}")
    matches = [section for section in SECTIONS if hasattr(getattr(config, section), param)]
    if len(matches) != 1:
        raise UsageError(f"Parameter '{param}' is unknown or ambiguous; use section.key")
    return matches[0], param


def sweep(config: DiasConfig, corpus: Corpus, param: str, values: Sequence[float]) -> list[dict]:
    """One training run per value of a single parameter, the rest held fixed."""
    section, key = resolve_param(config, param)
    current = getattr(getattr(config, section), key)
    rows = []
    for value in values:
        if isinstance(current, int) and not isinstance(current, bool):
            if float(value) != int(value):
                raise UsageError(f"{section}.{key} takes integer values, got {value}")
            value = int(value)
        logger.info(f"Sweep {section}.{key}={value}")
        variant = config_from_dict({section: {key: value}}, config).validate()
        report = run_config(variant, corpus)
        rows.append({"param": f"{section}.{key}", "value": value, "rsum": report["rsum"]})
    return rows
