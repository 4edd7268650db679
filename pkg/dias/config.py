"""
Configuration for DIAS.

Defaults live in the dataclasses below and are mirrored by config/dias.yaml.
Layering: dataclass defaults -> config/dias.yaml -> --config file -> CLI flags.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dias.errors import UsageError
from dias.utils import DEFAULT_CONFIG_FILE, load_config_file

logger = logging.getLogger(__name__)

DIM_ALIGN_VARIANTS = ("naive", "normalized", "normalized-signed")
PAIRING_MODES = ("paired-instance", "resample")
THRESHOLD_SPACES = ("magnitude", "probability")
SPARSIFIERS = ("soft-threshold", "top-k", "l1", "none")
SAMPLING_STRATEGIES = ("neighbor", "random")


@dataclass
class LossWeights:
    """Margin and term weights of the combined objective."""

    margin_alpha: float = 0.2
    w_dim: float = 10.0
    w_inter: float = 0.05
    w_intra: float = 0.1

    def validate(self) -> None:
        for name in ("margin_alpha", "w_dim", "w_inter", "w_intra"):
            if getattr(self, name) < 0:
                raise UsageError(f"weights.{name} must be >= 0")


@dataclass
class DimAlignConfig:
    """Dimension-alignment regularizer settings."""

    variant: str = "normalized-signed"
    pairing: str = "paired-instance"
    resample_k: int = 4

    def validate(self) -> None:
        if self.variant not in DIM_ALIGN_VARIANTS:
            raise UsageError(f"dim_align.variant must be one of {DIM_ALIGN_VARIANTS}")
        if self.pairing not in PAIRING_MODES:
            raise UsageError(f"dim_align.pairing must be one of {PAIRING_MODES}")
        if self.resample_k < 1:
            raise UsageError("dim_align.resample_k must be >= 1")


@dataclass
class SparsityConfig:
    """Selection of spatial-constraint entries."""

    sparsifier: str = "soft-threshold"
    threshold_space: str = "magnitude"
    temperature: float = 0.1
    beta_init: float = 1.0
    sparse_inter: bool = True
    sparse_intra: bool = True
    top_k: int = 8
    l1_lambda: float = 0.1

    def validate(self) -> None:
        if self.sparsifier not in SPARSIFIERS:
            raise UsageError(f"sparsity.sparsifier must be one of {SPARSIFIERS}")
        if self.threshold_space not in THRESHOLD_SPACES:
            raise UsageError(f"sparsity.threshold_space must be one of {THRESHOLD_SPACES}")
        if self.temperature <= 0:
            raise UsageError("sparsity.temperature must be > 0")
        if self.top_k < 1:
            raise UsageError("sparsity.top_k must be >= 1")
        if self.l1_lambda < 0:
            raise UsageError("sparsity.l1_lambda must be >= 0")


@dataclass
class BatchSpec:
    """Neighbor-sampling batch composition: M clusters x P images."""

    clusters_M: int = 16
    per_cluster_P: int = 8
    kmeans_k: int = 64
    kmeans_iters: int = 20
    strategy: str = "neighbor"
    seed: int = 0  # K-means seeding and cluster draws

    @property
    def batch_N(self) -> int:
        return self.clusters_M * self.per_cluster_P

    def validate(self) -> None:
        if self.clusters_M < 1 or self.per_cluster_P < 1:
            raise UsageError("batch.clusters_M and batch.per_cluster_P must be >= 1")
        if self.kmeans_k < 1 or self.kmeans_iters < 1:
            raise UsageError("batch.kmeans_k and batch.kmeans_iters must be >= 1")
        if self.strategy not in SAMPLING_STRATEGIES:
            raise UsageError(f"batch.strategy must be one of {SAMPLING_STRATEGIES}")
        if self.strategy == "neighbor" and self.kmeans_k < self.clusters_M:
            raise UsageError("batch.kmeans_k must be >= batch.clusters_M")


@dataclass
class OptimConfig:
    """Adam settings, epoch schedule and validation split."""

    epochs: int = 30
    learning_rate: float = 5e-4
    lr_decay: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    negative_clip: float = 100.0
    val_pairs: int = 100

    def validate(self) -> None:
        if self.epochs < 0:
            raise UsageError("optim.epochs must be >= 0")
        if self.learning_rate < 0:
            raise UsageError("optim.learning_rate must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise UsageError("optim.lr_decay must be in (0, 1]")
        if self.negative_clip <= 0:
            raise UsageError("optim.negative_clip must be > 0")
        if self.val_pairs < 1:
            raise UsageError("optim.val_pairs must be >= 1")


@dataclass
class ModelConfig:
    """Shared embedding space."""

    embed_dim: int = 32

    def validate(self) -> None:
        if self.embed_dim < 1:
            raise UsageError("model.embed_dim must be >= 1")


@dataclass
class SynthSpec:
    """Shared-latent synthetic corpus generator settings."""

    num_pairs: int = 1000
    latent_dim: int = 16
    d_in_image: int = 32
    d_in_text: int = 32
    regions_range: tuple[int, int] = (4, 8)
    words_range: tuple[int, int] = (4, 10)
    texts_per_image: int = 5
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name in ("regions_range", "words_range"):
            low, high = getattr(self, name)
            if low < 1 or high < low:
                raise UsageError(f"synth.{name} must satisfy 1 <= min <= max")
        if self.num_pairs < 1 or self.latent_dim < 1 or self.texts_per_image < 1:
            raise UsageError("synth.num_pairs, latent_dim, texts_per_image must be >= 1")
        if self.noise_sigma < 0:
            raise UsageError("synth.noise_sigma must be >= 0")


@dataclass
class EvalConfig:
    """Retrieval evaluation protocol."""

    folds: int = 5
    ks: tuple[int, ...] = (1, 5, 10)
    chunk_size: int = 64

    def validate(self) -> None:
        if self.folds < 1:
            raise UsageError("eval.folds must be >= 1")
        if any(k < 1 for k in self.ks):
            raise UsageError("eval.ks must all be >= 1")


@dataclass
class DiasConfig:
    """Complete configuration tree."""

    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    dim_align: DimAlignConfig = field(default_factory=DimAlignConfig)
    sparsity: SparsityConfig = field(default_factory=SparsityConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "DiasConfig":
        for section in SECTIONS:
            getattr(self, section).validate()
        return self

    def with_seed(self, seed: int) -> "DiasConfig":
        """Return a copy whose every random stream derives from `seed`."""
        return dataclasses.replace(
            self,
            seed=seed,
            batch=dataclasses.replace(self.batch, seed=seed),
            synth=dataclasses.replace(self.synth, seed=seed),
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


SECTIONS = ("weights", "dim_align", "sparsity", "batch", "optim", "model", "synth", "eval")


def _build_section(cls: type, base: Any, overrides: dict, section: str) -> Any:
    """Apply a dict of overrides to one section dataclass."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, value in overrides.items():
        if key not in known:
            raise UsageError(f"Unknown config key: {section}.{key}")
        if isinstance(getattr(base, key), tuple) and isinstance(value, list):
            value = tuple(value)
        values[key] = value
    return dataclasses.replace(base, **values)


def config_from_dict(data: dict, base: DiasConfig | None = None) -> DiasConfig:
    """
    Merge a nested dict over a base configuration.

    Args:
        data: Nested mapping {section: {key: value}} plus optional top-level seed
        base: Configuration to override (default: dataclass defaults)

    Returns:
        New DiasConfig (not yet validated)
    """
    config = base or DiasConfig()
    for key in data:
        if key != "seed" and key not in SECTIONS:
            raise UsageError(f"Unknown config section: {key}")

    sections = {}
    for section in SECTIONS:
        current = getattr(config, section)
        overrides = data.get(section) or {}
        if not isinstance(overrides, dict):
            raise UsageError(f"Config section {section} must be a mapping")
        sections[section] = _build_section(type(current), current, overrides, section)

    config = dataclasses.replace(config, **sections)
    if "seed" in data:
        config = config.with_seed(int(data["seed"]))
    return config


def load_config(path: str | Path | None = None, seed: int | None = None) -> DiasConfig:
    """
    Load the layered configuration.

    Args:
        path: Optional user config file (YAML or JSON)
        seed: Optional seed override from the command line

    Returns:
        Validated DiasConfig
    """
    config = DiasConfig()
    if DEFAULT_CONFIG_FILE.exists():
        config = config_from_dict(load_config_file(DEFAULT_CONFIG_FILE), config)

    if path is not None:
        logger.info(f"Loading config overrides from {path}")
        config = config_from_dict(load_config_file(path), config)

    if seed is not None:
        config = config.with_seed(seed)

    return config.validate()
