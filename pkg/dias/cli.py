"""
DIAS command-line interface.

Subcommands:
- gen-synth: write a shared-latent synthetic corpus
- train: fit projections and sparsity parameters, log every epoch
- eval: R@K / rSum report, 5-fold or whole-set
- gradcheck: finite-difference check of every loss term
- histogram: distance distribution of a (trained) embedding space
- inspect-mask: residuals, thresholds and the selected entries of one batch
- ablate, compare-sparsifiers, sweep: experiment harnesses
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable

import torch

from dias.config import DiasConfig, load_config
from dias.corpus import Corpus, read_corpus, require_images, write_corpus
from dias.embedding import Modality, ProjectionParams, pad_raw, project_batch
from dias.errors import DiasError, UsageError
from dias.evaluate import five_fold_eval, projection_scorer
from dias.experiments import ABLATION_VARIANTS, ablate, apply_variant, compare_sparsifiers, gradient_suite, sweep
from dias.interaction import paired_globals
from dias.objective import Betas
from dias.sparse import select
from dias.spatial import distance_histogram, inter_distance, intra_distance, off_diagonal_values, residual
from dias.synth import gen_synth
from dias.train import TrainState, train
from dias.utils import DIAS_LOG_LEVEL, DIAS_OUT_DIR, setup_logging, setup_torch, write_csv, write_json

logger = logging.getLogger(__name__)

HISTOGRAM_KINDS = ("inter", "intra-image", "intra-text")
MASK_KINDS = ("inter", "intra")


def _banner(title: str) -> None:
    logger.info("=" * 60)
    logger.info(title)
    logger.info("=" * 60)


def _load_corpus(path: str) -> Corpus:
    _, corpus = read_corpus(path)
    return corpus


def _load_model(args: argparse.Namespace, config: DiasConfig, corpus: Corpus) -> tuple[ProjectionParams, Betas]:
    """Checkpointed parameters, or a seeded untrained projection."""
    if getattr(args, "checkpoint", None):
        state = TrainState.load(args.checkpoint)
        projection, betas = state.projection, state.betas
        logger.info(f"Loaded checkpoint {args.checkpoint} (epoch {state.epoch})")
    else:
        generator = torch.Generator().manual_seed(config.seed)
        projection = ProjectionParams.init(corpus.d_in_image, corpus.d_in_text, config.model.embed_dim, generator)
        betas = Betas.init(config.sparsity.beta_init)
        logger.info("No checkpoint given, using an untrained projection")

    if projection.weight_image.shape[0] != corpus.d_in_image or projection.weight_text.shape[0] != corpus.d_in_text:
        raise UsageError("Checkpoint input widths do not match the corpus")
    projection.validate()
    return projection, betas


def _pair_globals(corpus: Corpus, projection: ProjectionParams, pairs: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Global embeddings of the first `pairs` images, each with its first text."""
    require_images(corpus, pairs, "Inspection")
    text_index = [int(corpus.texts_of(i)[0]) for i in range(pairs)]
    raw_v, mask_v = pad_raw(corpus.images[:pairs])
    raw_t, mask_t = pad_raw([corpus.texts[t] for t in text_index])
    with torch.no_grad():
        images = project_batch(raw_v, mask_v, projection, Modality.IMAGE, corpus.image_ids[:pairs])
        texts = project_batch(raw_t, mask_t, projection, Modality.TEXT, [corpus.text_ids[t] for t in text_index])
        return paired_globals(images, texts)


def cmd_gen_synth(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    spec = config.synth
    synthetic = gen_synth(spec)
    manifest_path = out_dir / "corpus.json"
    write_corpus(synthetic.corpus, manifest_path)
    logger.info(f"  Pairs: {spec.num_pairs}")
    logger.info(f"  Texts: {synthetic.corpus.num_texts}")
    logger.info(f"  Oracle cosine matched: {synthetic.matched_cosine:.4f}")
    logger.info(f"  Oracle cosine unmatched: {synthetic.unmatched_cosine:.4f}")
    return 0


def cmd_train(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    corpus = _load_corpus(args.corpus)
    if args.variant == "baseline":
        config = apply_variant(config, "baseline")
        logger.info("Baseline variant: triplet loss only")

    log_path = out_dir / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()

    result = train(config, corpus, log_path)
    result.state.save(out_dir / "checkpoint.pt", config)
    write_json(
        out_dir / "train_summary.json",
        {
            "variant": args.variant,
            "seed": config.seed,
            "epochs": result.state.epoch,
            "initial": result.initial_report.to_dict(),
            "final": result.final_report.to_dict(),
        },
    )
    logger.info(f"  Epoch-0 val rsum: {result.initial_report.rsum:.2f}")
    logger.info(f"  Final val rsum: {result.final_report.rsum:.2f}")
    return 0


def cmd_eval(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    corpus = _load_corpus(args.corpus)
    projection, _ = _load_model(args, config, corpus)
    folds = args.folds if args.folds is not None else config.eval.folds
    report = five_fold_eval(corpus, projection_scorer(projection, config.eval.chunk_size), folds, config.eval.ks)
    write_json(out_dir / "eval_report.json", report.to_dict())
    logger.info(f"  Folds: {report.fold_count}")
    for key, value in report.to_dict().items():
        logger.info(f"  {key}: {value:.2f}" if isinstance(value, float) else f"  {key}: {value}")
    return 0


def cmd_gradcheck(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    pairs = args.pairs or None
    dims = args.dim or None
    records = gradient_suite(pairs or (2, 4, 6), dims or (4, 8), config.seed)
    failed = [r for r in records if not r["passed"]]
    write_json(out_dir / "gradcheck.json", {"passed": not failed, "records": records})
    logger.info(f"  Checks: {len(records)}, failed: {len(failed)}")
    for record in failed:
        logger.error(f"  {record['term']} N={record['pairs']} d={record['dim']}: {record['diagnostic']}")
    return 1 if failed else 0


def cmd_histogram(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    corpus = _load_corpus(args.corpus)
    projection, _ = _load_model(args, config, corpus)
    pairs = args.pairs or corpus.num_images
    image_globals, text_globals = _pair_globals(corpus, projection, pairs)

    if args.kind == "inter":
        values = inter_distance(image_globals, text_globals).values.numpy().ravel()
    else:
        distances = intra_distance(image_globals, text_globals)
        matrix = distances.image_values if args.kind == "intra-image" else distances.text_values
        values = off_diagonal_values(matrix)

    bins = distance_histogram(values, args.bins)
    path = out_dir / f"histogram_{args.kind}.csv"
    write_csv(path, ("bin_start", "bin_end", "count"), bins)
    logger.info(f"  {len(values)} distances in {len(bins)} bins -> {path}")
    return 0


def cmd_inspect_mask(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    corpus = _load_corpus(args.corpus)
    projection, betas = _load_model(args, config, corpus)
    image_globals, text_globals = _pair_globals(corpus, projection, args.pairs)

    if args.kind == "inter":
        residuals = residual(inter_distance(image_globals, text_globals))
        beta_row, beta_col = betas.inter_row, betas.inter_col
    else:
        residuals = residual(intra_distance(image_globals, text_globals))
        beta_row, beta_col = betas.intra_row, betas.intra_col

    with torch.no_grad():
        thresholds, mask = select(residuals, beta_row, beta_col, config.sparsity.threshold_space)

    values = residuals.values.numpy()
    rows = [
        (
            i,
            j,
            float(values[i, j]),
            float(thresholds.row_thresholds[i]),
            float(thresholds.col_thresholds[j]),
            int(mask.values[i, j].item()),
        )
        for i in range(residuals.size)
        for j in range(residuals.size)
    ]
    path = out_dir / f"mask_{args.kind}.csv"
    write_csv(path, ("i", "j", "residual", "threshold_row", "threshold_col", "selected"), rows)
    logger.info(f"  Selected {mask.selected_count}/{len(rows)} entries (density {mask.density:.3f}) -> {path}")
    return 0


def cmd_ablate(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    corpus = _load_corpus(args.corpus)
    rows, summary = ablate(config, corpus, args.seeds, args.variants)
    write_csv(out_dir / "ablation.csv", ("variant", "seed", "rsum"), [(r["variant"], r["seed"], r["rsum"]) for r in rows])
    write_csv(out_dir / "ablation_summary.csv", ("variant", "mean_rsum"), [(s["variant"], s["mean_rsum"]) for s in summary])
    for entry in summary:
        logger.info(f"  {entry['variant']:<16} mean rsum={entry['mean_rsum']:.2f}")
    return 0


def cmd_compare_sparsifiers(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    corpus = _load_corpus(args.corpus)
    rows = compare_sparsifiers(config, corpus)
    header = ("sparsifier", "rsum", "i2t_r1", "t2i_r1")
    write_csv(out_dir / "sparsifiers.csv", header, [[row[key] for key in header] for row in rows])
    for row in rows:
        logger.info(f"  {row['sparsifier']:<15} rsum={row['rsum']:.2f}")
    return 0


def cmd_sweep(args: argparse.Namespace, config: DiasConfig, out_dir: Path) -> int:
    corpus = _load_corpus(args.corpus)
    rows = sweep(config, corpus, args.param, args.values)
    name = args.param.replace(".", "_")
    write_csv(out_dir / f"sweep_{name}.csv", ("param", "value", "rsum"), [(r["param"], r["value"], r["rsum"]) for r in rows])
    for row in rows:
        logger.info(f"  {row['param']}={row['value']}: rsum={row['rsum']:.2f}")
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace, DiasConfig, Path], int]] = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "histogram": cmd_histogram,
    "inspect-mask": cmd_inspect_mask,
    "ablate": cmd_ablate,
    "compare-sparsifiers": cmd_compare_sparsifiers,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dias",
        description="DIAS image-text matching",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python -m dias.cli --out out gen-synth
  python -m dias.cli --out out train --corpus out/corpus.json
  python -m dias.cli --out out eval --corpus out/corpus.json --checkpoint out/checkpoint.pt
        """,
    )
    parser.add_argument("--config", type=str, default=None, help="YAML/JSON config overrides")
    parser.add_argument("--seed", type=int, default=None, help="Seed for every random stream")
    parser.add_argument("--out", type=str, default=DIAS_OUT_DIR, help="Output directory")
    parser.add_argument("--log-level", type=str, default=DIAS_LOG_LEVEL, help="Logging level")

    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-synth", help="Write a synthetic corpus")

    p = sub.add_parser("train", help="Train on a corpus")
    p.add_argument("--corpus", required=True, help="Corpus manifest")
    p.add_argument("--variant", choices=("dias", "baseline"), default="dias", help="baseline = triplet loss only")

    p = sub.add_parser("eval", help="Retrieval evaluation")
    p.add_argument("--corpus", required=True, help="Corpus manifest")
    p.add_argument("--checkpoint", default=None, help="Checkpoint from train")
    p.add_argument("--folds", type=int, default=None, help="5 for fold averaging, 1 for the whole set")

    p = sub.add_parser("gradcheck", help="Finite-difference check of every loss term")
    p.add_argument("--pairs", type=int, nargs="*", default=None, help="Batch sizes (default 2 4 6)")
    p.add_argument("--dim", type=int, nargs="*", default=None, help="Embedding widths (default 4 8)")

    p = sub.add_parser("histogram", help="Distance histogram CSV")
    p.add_argument("--corpus", required=True, help="Corpus manifest")
    p.add_argument("--checkpoint", default=None, help="Checkpoint from train")
    p.add_argument("--bins", type=int, default=20, help="Number of bins")
    p.add_argument("--kind", choices=HISTOGRAM_KINDS, default="inter", help="Which distances")
    p.add_argument("--pairs", type=int, default=None, help="Pairs to include (default all)")

    p = sub.add_parser("inspect-mask", help="Residuals, thresholds and selection CSV")
    p.add_argument("--corpus", required=True, help="Corpus manifest")
    p.add_argument("--checkpoint", default=None, help="Checkpoint from train")
    p.add_argument("--kind", choices=MASK_KINDS, default="inter", help="Residual kind")
    p.add_argument("--pairs", type=int, default=8, help="Batch size")

    p = sub.add_parser("ablate", help="Ablation variants over several seeds")
    p.add_argument("--corpus", required=True, help="Corpus manifest")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="Seeds")
    p.add_argument("--variants", nargs="+", choices=ABLATION_VARIANTS, default=list(ABLATION_VARIANTS))

    p = sub.add_parser("compare-sparsifiers", help="Soft-threshold vs Top-k vs L1")
    p.add_argument("--corpus", required=True, help="Corpus manifest")

    p = sub.add_parser("sweep", help="One-parameter sensitivity sweep")
    p.add_argument("--corpus", required=True, help="Corpus manifest")
    p.add_argument("--param", required=True, help="Parameter name, e.g. w_dim or weights.w_dim")
    p.add_argument("--values", type=float, nargs="+", required=True, help="Values to try")

    return parser


def main(argv: list[str] | None = None) -> int:
    """CLI entry point."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    setup_torch()

    _banner(f"DIAS {args.command} started")
    try:
        config = load_config(args.config, args.seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args, config, out_dir)
    except DiasError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except FileNotFoundError as e:
        logger.error(f"File not found: {e.filename}")
        return 1

    _banner(f"DIAS {args.command} complete")
    return code


if __name__ == "__main__":
    sys.exit(main())
