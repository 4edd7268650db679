"""
Training loop.

Runs the DIAS pipeline per epoch:
1. Pool current image embeddings and re-cluster them
2. Draw neighbor-sampled batches, pairing every image with one of its texts
3. Minimize the combined objective with Adam
4. Decay the learning rate by 10%
5. Evaluate on the held-out pairs and append a JSON-lines record
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from dias.config import DiasConfig
from dias.corpus import Corpus, require_images
from dias.embedding import Modality, ProjectionParams, pad_raw, project_batch
from dias.errors import NonFiniteLossError
from dias.evaluate import EvalReport, corpus_similarity, evaluate
from dias.interaction import masked_mean
from dias.objective import Betas, LossBreakdown, total_loss
from dias.sampling import sample_batches
from dias.utils import append_jsonl

logger = logging.getLogger(__name__)

LOG_FIELDS = (
    "loss_total",
    "loss_loc",
    "loss_dim",
    "loss_inter",
    "loss_intra",
    "mask_density_inter",
    "mask_density_intra",
)


@dataclass
class TrainState:
    """Everything needed to resume or evaluate a run."""

    projection: ProjectionParams
    betas: Betas
    optimizer_moments: dict
    epoch: int
    learning_rate: float

    def save(self, path: str | Path, config: DiasConfig | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "projection": {k: v.detach().clone() for k, v in self.projection.named_tensors().items()},
                "betas": {k: v.detach().clone() for k, v in self.betas.named_tensors().items()},
                "optimizer": self.optimizer_moments,
                "epoch": self.epoch,
                "learning_rate": self.learning_rate,
                "config": config.to_dict() if config is not None else None,
            },
            path,
        )
        logger.info(f"Checkpoint saved: {path}")

    @classmethod
    def load(cls, path: str | Path) -> "TrainState":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        betas = payload["betas"]
        return cls(
            projection=ProjectionParams(**payload["projection"]),
            betas=Betas(
                betas["beta_inter_row"], betas["beta_inter_col"], betas["beta_intra_row"], betas["beta_intra_col"]
            ),
            optimizer_moments=payload["optimizer"],
            epoch=int(payload["epoch"]),
            learning_rate=float(payload["learning_rate"]),
        )


@dataclass
class TrainResult:
    """Final state, per-epoch records and validation reports."""

    state: TrainState
    records: list[dict] = field(default_factory=list)
    initial_report: EvalReport | None = None
    final_report: EvalReport | None = None


def learning_rate_at(config: DiasConfig, epoch: int) -> float:
    """lr(e) = lr0 * decay^e."""
    return config.optim.learning_rate * config.optim.lr_decay**epoch


def split_corpus(corpus: Corpus, config: DiasConfig) -> tuple[Corpus, Corpus]:
    """Hold out the last `val_pairs` images (with their texts) for validation."""
    val_pairs = config.optim.val_pairs
    require_images(corpus, val_pairs + config.batch.batch_N, "Training")
    cut = corpus.num_images - val_pairs
    return corpus.subset(range(cut)), corpus.subset(range(cut, corpus.num_images))


def _check_finite(breakdown: LossBreakdown) -> None:
    for term, value in breakdown.terms().items():
        number = float(value.detach().item())
        if not math.isfinite(number):
            raise NonFiniteLossError(term, number)


def _mean_records(rows: list[dict]) -> dict:
    return {key: float(np.mean([row[key] for row in rows])) for key in LOG_FIELDS}


def train(
    config: DiasConfig,
    corpus: Corpus,
    log_path: str | Path | None = None,
) -> TrainResult:
    """
    Train projection heads and sparsity parameters.

    Args:
        config: Validated configuration
        corpus: Training corpus; the last optim.val_pairs images are held out
        log_path: Optional JSON-lines log (one record per epoch)

    Returns:
        TrainResult; deterministic given config.seed

    Raises:
        NonFiniteLossError: A loss term became NaN or infinite
    """
    train_set, val_set = split_corpus(corpus, config)
    logger.info(f"Training on {train_set.num_images} images, validating on {val_set.num_images}")

    generator = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    batch_rng = np.random.default_rng(config.batch.seed)

    params = ProjectionParams.init(corpus.d_in_image, corpus.d_in_text, config.model.embed_dim, generator)
    params.requires_grad_()
    betas = Betas.init(config.sparsity.beta_init).requires_grad_()
    optimizer = torch.optim.Adam(
        list(params.named_tensors().values()) + list(betas.named_tensors().values()),
        lr=config.optim.learning_rate,
        betas=(config.optim.adam_beta1, config.optim.adam_beta2),
        eps=config.optim.adam_eps,
    )
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=config.optim.lr_decay)

    raw_v, mask_v = pad_raw(train_set.images)
    raw_t, mask_t = pad_raw(train_set.texts)
    texts_of = [train_set.texts_of(i) for i in range(train_set.num_images)]

    def validate() -> EvalReport:
        return evaluate(
            corpus_similarity(val_set, params, config.eval.chunk_size), val_set.text_image, config.eval.ks
        )

    initial_report = validate()
    logger.info(f"Epoch 0 (untrained) validation rsum={initial_report.rsum:.2f}")

    result = TrainResult(state=None, initial_report=initial_report)  # type: ignore[arg-type]
    for epoch in range(config.optim.epochs):
        lr = optimizer.param_groups[0]["lr"]

        with torch.no_grad():
            pooled = masked_mean(project_batch(raw_v, mask_v, params, Modality.IMAGE, train_set.image_ids).vectors, mask_v, dim=1)
        batches = sample_batches(pooled.numpy(), config.batch, batch_rng)

        rows = []
        for image_index in batches:
            text_index = np.array([rng.choice(texts_of[i]) for i in image_index], dtype=np.int64)
            image_rows = torch.as_tensor(image_index)
            text_rows = torch.as_tensor(text_index)
            images = project_batch(
                raw_v[image_rows], mask_v[image_rows], params, Modality.IMAGE,
                [train_set.image_ids[i] for i in image_index],
            )
            texts = project_batch(
                raw_t[text_rows], mask_t[text_rows], params, Modality.TEXT,
                [train_set.text_ids[t] for t in text_index],
            )

            breakdown = total_loss(
                images,
                texts,
                betas,
                config.weights,
                config.dim_align,
                config.sparsity,
                seed=rng,
                negative_clip=config.optim.negative_clip,
                training=True,
                generator=generator,
            )
            _check_finite(breakdown)

            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            rows.append(breakdown.as_floats())

        scheduler.step()
        report = validate()
        record = {"epoch": epoch, "lr": lr, **_mean_records(rows), "val_rsum": report.rsum}
        result.records.append(record)
        if log_path is not None:
            append_jsonl(log_path, record)
        logger.info(
            f"Epoch {epoch + 1}/{config.optim.epochs}: lr={lr:.3e} "
            f"loss={record['loss_total']:.4f} (loc={record['loss_loc']:.4f}, dim={record['loss_dim']:.4f}, "
            f"inter={record['loss_inter']:.4f}, intra={record['loss_intra']:.4f}) val_rsum={report.rsum:.2f}"
        )
        result.final_report = report

    if result.final_report is None:
        result.final_report = initial_report

    result.state = TrainState(
        projection=params.detach(),
        betas=betas.detach(),
        optimizer_moments=optimizer.state_dict(),
        epoch=config.optim.epochs,
        learning_rate=optimizer.param_groups[0]["lr"],
    )
    return result
