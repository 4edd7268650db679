"""
Retrieval evaluation: R@K in both directions, rSum and fold averaging.

Image-to-text succeeds when any matched text is in the top K; every text is
an independent text-to-image query. Ties in ranking go to the lower index.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from dias.corpus import Corpus
from dias.embedding import Modality, ProjectionParams, pad_raw, project_batch
from dias.errors import UsageError
from dias.interaction import pairwise_similarity

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10)
DIRECTIONS = ("i2t", "t2i")

Scorer = Callable[[Corpus], np.ndarray]


@dataclass
class EvalReport:
    """Recall percentages per direction and K, plus their sum."""

    r_at: dict[str, dict[int, float]] = field(default_factory=dict)
    rsum: float = 0.0
    fold_count: int = 1

    def to_dict(self) -> dict:
        out: dict = {}
        for direction in DIRECTIONS:
            for k, value in sorted(self.r_at.get(direction, {}).items()):
                out[f"{direction}_r{k}"] = value
        out["rsum"] = self.rsum
        return out


def _first_hit_rank(scores: np.ndarray, targets: Sequence[int]) -> int:
    """Zero-based rank of the best-ranked target under descending score, lower index first on ties."""
    best = scores.shape[0]
    indices = np.arange(scores.shape[0])
    for j in targets:
        s = scores[j]
        rank = int(np.sum(scores > s) + np.sum((scores == s) & (indices < j)))
        best = min(best, rank)
    return best


def first_hit_ranks(similarity: np.ndarray, ground_truth: Sequence[set[int]]) -> np.ndarray:
    """Rank of the first ground-truth hit for every query row."""
    similarity = np.asarray(similarity, dtype=np.float64)
    if similarity.shape[0] != len(ground_truth):
        raise UsageError(f"{similarity.shape[0]} query rows but {len(ground_truth)} ground-truth sets")
    ranks = np.empty(similarity.shape[0], dtype=np.int64)
    for q, targets in enumerate(ground_truth):
        if not targets:
            raise UsageError(f"Query {q} has no ground-truth match")
        ranks[q] = _first_hit_rank(similarity[q], sorted(targets))
    return ranks


def recall_at_k(similarity: np.ndarray, ground_truth: Sequence[set[int]], K: int) -> float:
    """
    Percentage of queries with a ground-truth item in the top K.

    Args:
        similarity: (N_query x N_candidate) scores, higher is better
        ground_truth: Matched candidate indices per query
        K: Cutoff (>= 1)

    Returns:
        Recall in [0, 100]
    """
    if K < 1:
        raise UsageError("recall_at_k: K must be >= 1")
    ranks = first_hit_ranks(similarity, ground_truth)
    return 100.0 * float(np.mean(ranks < K))


def evaluate(similarity: np.ndarray, text_image: np.ndarray, ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    """
    Both retrieval directions from one image x text score matrix.

    Args:
        similarity: (N_img x N_txt) scores
        text_image: Image index of every text
        ks: Recall cutoffs

    Returns:
        EvalReport for a single fold
    """
    similarity = np.asarray(similarity, dtype=np.float64)
    text_image = np.asarray(text_image)
    image_truth = [set(np.flatnonzero(text_image == i).tolist()) for i in range(similarity.shape[0])]
    text_truth = [{int(i)} for i in text_image]

    i2t_ranks = first_hit_ranks(similarity, image_truth)
    t2i_ranks = first_hit_ranks(similarity.T, text_truth)
    r_at = {
        "i2t": {k: 100.0 * float(np.mean(i2t_ranks < k)) for k in ks},
        "t2i": {k: 100.0 * float(np.mean(t2i_ranks < k)) for k in ks},
    }
    rsum = sum(value for direction in DIRECTIONS for value in r_at[direction].values())
    return EvalReport(r_at, rsum, 1)


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Arithmetic mean of every metric over folds."""
    if not reports:
        raise UsageError("average_reports: no reports")
    r_at: dict[str, dict[int, float]] = {}
    for direction in DIRECTIONS:
        ks = sorted(reports[0].r_at[direction])
        r_at[direction] = {k: float(np.mean([r.r_at[direction][k] for r in reports])) for k in ks}
    rsum = sum(value for direction in DIRECTIONS for value in r_at[direction].values())
    return EvalReport(r_at, rsum, len(reports))


def five_fold_eval(corpus: Corpus, scorer: Scorer, folds: int = 5, ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    """
    Evaluate contiguous image folds independently and average.

    Args:
        corpus: Test corpus (image count divisible by `folds`)
        scorer: Maps a corpus to its (N_img x N_txt) score matrix
        folds: Number of folds (1 gives the whole-set protocol)
        ks: Recall cutoffs

    Returns:
        Averaged EvalReport
    """
    if folds < 1 or corpus.num_images % folds != 0:
        raise UsageError(f"{corpus.num_images} images cannot be split into {folds} equal folds")
    fold_size = corpus.num_images // folds
    reports = []
    for fold in range(folds):
        part = corpus.subset(range(fold * fold_size, (fold + 1) * fold_size))
        report = evaluate(scorer(part), part.text_image, ks)
        logger.info(f"Fold {fold + 1}/{folds}: rsum={report.rsum:.2f}")
        reports.append(report)
    return average_reports(reports)


def corpus_similarity(corpus: Corpus, params: ProjectionParams, chunk_size: int = 64) -> np.ndarray:
    """
    Local-matching scores for every image and text of a corpus.

    Args:
        corpus: Raw features
        params: Projection parameters
        chunk_size: Images per scoring block

    Returns:
        (N_img x N_txt) float64 array
    """
    with torch.no_grad():
        raw_v, mask_v = pad_raw(corpus.images)
        raw_t, mask_t = pad_raw(corpus.texts)
        images = project_batch(raw_v, mask_v, params, Modality.IMAGE, corpus.image_ids)
        texts = project_batch(raw_t, mask_t, params, Modality.TEXT, corpus.text_ids)
        return pairwise_similarity(images, texts, chunk_size).numpy()


def projection_scorer(params: ProjectionParams, chunk_size: int = 64) -> Scorer:
    def score(part: Corpus) -> np.ndarray:
        return corpus_similarity(part, params, chunk_size)

    return score
