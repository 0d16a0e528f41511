"""Detection-quality and uncertainty metrics over score/label pairs.

The three detection metrics (AUROC, AUPR, FPR at fixed recall) are computed
from one descending sort with tie groups processed atomically, so they match
their O(N^2) definitions exactly while staying O(N log N).  Anomalies are
the positive class and scores follow "higher = more anomalous"; an item is
flagged when score >= threshold.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateLabelsError,
    ShapeError,
    ValidationError,
)

DEFAULT_RECALL_LEVEL = 0.95
DEFAULT_CALIBRATION_BINS = 15


@dataclass(frozen=True)
class EvalReport:
    auroc: float
    aupr: float
    fpr_at_recall: float
    recall_level: float
    n_pos: int
    n_neg: int
    n_images: int = 1
    skipped_images: int = 0


@dataclass(frozen=True)
class RraCurve:
    """Accuracy at each response rate, on a strictly increasing rate grid."""

    response_rates: np.ndarray
    accuracies: np.ndarray


def _validate_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape[0] != labels.shape[0]:
        raise ShapeError(f"{scores.shape[0]} scores but {labels.shape[0]} labels")
    if scores.shape[0] == 0:
        raise ShapeError("need at least one score")
    if not np.isfinite(scores).all():
        raise ValidationError("scores contain non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 (in-distribution) or 1 (anomaly)")
    labels = labels.astype(np.int64)
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need both classes, got {n_pos} anomalies and {n_neg} normals"
        )
    return scores, labels, n_pos, n_neg


def _sweep(scores, labels):
    """Cumulative TP/FP at the last index of each tie group, scores descending."""
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    boundary = np.empty(sorted_scores.shape[0], dtype=bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    boundary[-1] = True
    tp = np.cumsum(sorted_labels)[boundary]
    flagged = np.flatnonzero(boundary) + 1
    fp = flagged - tp
    return sorted_scores[boundary], tp.astype(np.float64), fp.astype(np.float64)


def auroc(scores, labels) -> float:
    """Probability that a random anomaly outscores a random normal item.

    Ties count one half, exactly as in the pairwise Mann-Whitney definition.
    """
    scores, labels, n_pos, n_neg = _validate_pair(scores, labels)
    _, tp, fp = _sweep(scores, labels)
    tp_prev = np.concatenate(([0.0], tp[:-1]))
    fp_prev = np.concatenate(([0.0], fp[:-1]))
    # Sum of wins + 0.5 * ties, accumulated as exact half-integers.
    numerator = ((fp - fp_prev) * (tp + tp_prev) / 2.0).sum()
    return float(numerator / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Average precision over the descending-score sweep (anomalies positive).

    Step integration: AP = sum_n (R_n - R_{n-1}) * P_n over tie-group ends.
    Its chance level equals the positive fraction.
    """
    scores, labels, n_pos, _ = _validate_pair(scores, labels)
    _, tp, fp = _sweep(scores, labels)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    recall_prev = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - recall_prev) * precision).sum())


def fpr_at_recall(scores, labels, recall: float = DEFAULT_RECALL_LEVEL) -> float:
    """False positive rate at the largest threshold reaching the given recall.

    The flag rule is score >= threshold; among thresholds whose TPR meets
    ``recall`` the largest one is chosen, which is the conservative (lowest
    FPR) choice.
    """
    if not 0.0 < recall <= 1.0:
        raise ConfigError(f"recall level must be in (0, 1], got {recall}")
    scores, labels, n_pos, n_neg = _validate_pair(scores, labels)
    _, tp, fp = _sweep(scores, labels)
    reached = np.flatnonzero(tp / n_pos >= recall)
    idx = reached[0]
    return float(fp[idx] / n_neg)


def detection_curves(scores, labels):
    """ROC and PR sweep points for external plotting.

    Returns (thresholds, fpr, tpr, precision, recall) at tie-group ends,
    thresholds descending.
    """
    scores, labels, n_pos, n_neg = _validate_pair(scores, labels)
    thresholds, tp, fp = _sweep(scores, labels)
    return thresholds, fp / n_neg, tp / n_pos, tp / (tp + fp), tp / n_pos


def evaluate(scores, labels, recall_level: float = DEFAULT_RECALL_LEVEL) -> EvalReport:
    """All three detection metrics on one score/label vector."""
    if not 0.0 < recall_level <= 1.0:
        raise ConfigError(f"recall level must be in (0, 1], got {recall_level}")
    scores, labels, n_pos, n_neg = _validate_pair(scores, labels)
    roc, ap, fpr = _all_metrics(scores, labels, n_pos, n_neg, recall_level)
    return EvalReport(auroc=roc, aupr=ap, fpr_at_recall=fpr,
                      recall_level=recall_level, n_pos=n_pos, n_neg=n_neg)


def _all_metrics(scores, labels, n_pos, n_neg, recall_level):
    """AUROC/AUPR/FPR from a single shared sweep."""
    _, tp, fp = _sweep(scores, labels)
    tp_prev = np.concatenate(([0.0], tp[:-1]))
    fp_prev = np.concatenate(([0.0], fp[:-1]))
    roc = ((fp - fp_prev) * (tp + tp_prev) / 2.0).sum() / (n_pos * n_neg)
    recall = tp / n_pos
    ap = ((recall - np.concatenate(([0.0], recall[:-1]))) * (tp / (tp + fp))).sum()
    idx = np.flatnonzero(recall >= recall_level)[0]
    return float(roc), float(ap), float(fp[idx] / n_neg)


def seg_evaluate(items, ids=None, recall_level: float = DEFAULT_RECALL_LEVEL,
                 threads: int | None = None) -> EvalReport:
    """Per-image metrics averaged over images (the protocol for pixel scores).

    ``items`` is a sequence of (score_map, mask) pairs; masks hold 0/1 per
    pixel.  Metrics are computed on each image separately and averaged,
    unweighted, over the images that contain both classes; single-class
    images are skipped and counted.  The reduction order is fixed (sorted by
    image id) so parallel evaluation is bit-identical to the serial path.
    """
    if not 0.0 < recall_level <= 1.0:
        raise ConfigError(f"recall level must be in (0, 1], got {recall_level}")
    items = list(items)
    if len(items) == 0:
        raise ShapeError("need at least one image")
    if ids is None:
        ids = list(range(len(items)))
    ids = list(ids)
    if len(ids) != len(items):
        raise ShapeError(f"{len(ids)} ids for {len(items)} images")

    def per_image(item):
        score_map, mask = item
        score_map = np.asarray(score_map, dtype=np.float64).ravel()
        mask = np.asarray(mask).ravel()
        if score_map.shape[0] != mask.shape[0]:
            raise ShapeError("score map and mask differ in size")
        if not np.isfinite(score_map).all():
            raise ValidationError("score map contains non-finite values")
        if not np.isin(mask, (0, 1)).all():
            raise ValidationError("mask values must be 0 or 1")
        mask = mask.astype(np.int64)
        n_pos = int(mask.sum())
        n_neg = mask.shape[0] - n_pos
        if n_pos == 0 or n_neg == 0:
            return None
        return (*_all_metrics(score_map, mask, n_pos, n_neg, recall_level),
                n_pos, n_neg)

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(per_image, items))
    else:
        results = [per_image(item) for item in items]

    order = sorted(range(len(items)), key=lambda i: ids[i])
    rocs, aps, fprs = [], [], []
    total_pos = total_neg = 0
    skipped = 0
    for i in order:
        if results[i] is None:
            skipped += 1
            continue
        roc, ap, fpr, n_pos, n_neg = results[i]
        rocs.append(roc)
        aps.append(ap)
        fprs.append(fpr)
        total_pos += n_pos
        total_neg += n_neg
    if not rocs:
        raise DegenerateLabelsError("every image lacks one of the two classes")
    return EvalReport(
        auroc=float(np.mean(rocs)),
        aupr=float(np.mean(aps)),
        fpr_at_recall=float(np.mean(fprs)),
        recall_level=recall_level,
        n_pos=total_pos,
        n_neg=total_neg,
        n_images=len(items),
        skipped_images=skipped,
    )


def _validate_confidence_pair(confidences, correct):
    confidences = np.asarray(confidences, dtype=np.float64).ravel()
    correct = np.asarray(correct).ravel()
    if confidences.shape[0] != correct.shape[0]:
        raise ShapeError(
            f"{confidences.shape[0]} confidences but {correct.shape[0]} flags"
        )
    if confidences.shape[0] == 0:
        raise ShapeError("need at least one item")
    if not np.isfinite(confidences).all():
        raise ValidationError("confidences contain non-finite values")
    if not np.isin(correct, (0, 1)).all():
        raise ValidationError("correctness flags must be 0 or 1")
    return confidences, correct.astype(np.float64)


def rra_curve(confidences, correct, grid=None) -> RraCurve:
    """Accuracy when answering only the most-confident fraction of items.

    At response rate p the classifier answers the ceil(p*N) items with the
    highest confidence (ties broken by input index) and the accuracy on that
    subset is recorded.  The default grid is 1%..100% in 1% steps.
    """
    confidences, correct = _validate_confidence_pair(confidences, correct)
    n = confidences.shape[0]
    if grid is None:
        grid = np.arange(1, 101, dtype=np.float64) / 100.0
    else:
        grid = np.asarray(grid, dtype=np.float64).ravel()
        if grid.shape[0] == 0:
            raise ConfigError("response-rate grid is empty")
        if np.any(grid <= 0) or np.any(grid > 1):
            raise ConfigError("response rates must lie in (0, 1]")
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("response rates must be strictly increasing")
    order = np.argsort(-confidences, kind="stable")
    cum_correct = np.cumsum(correct[order])
    # The small guard keeps ceil() from jumping a step on float error
    # (e.g. 0.07 * 100 == 7.000000000000001).
    counts = np.minimum(
        np.maximum([int(math.ceil(p * n - 1e-9)) for p in grid], 1), n
    )
    accuracies = cum_correct[counts - 1] / counts
    return RraCurve(response_rates=grid, accuracies=accuracies)


def aurra(curve: RraCurve) -> float:
    """Area under the response-rate/accuracy curve: the grid-mean accuracy."""
    return float(np.mean(curve.accuracies))


def aurra_score(confidences, correct, grid=None) -> float:
    return aurra(rra_curve(confidences, correct, grid=grid))


def l2_calibration_error(confidences, correct,
                         bins: int = DEFAULT_CALIBRATION_BINS) -> float:
    """RMS gap between confidence and accuracy over equal-width bins.

    sqrt(sum_b (n_b / N) * (mean_conf_b - acc_b)^2); empty bins contribute
    nothing.  Confidences must lie in [0, 1].
    """
    if bins < 1:
        raise ConfigError(f"need at least one bin, got {bins}")
    confidences, correct = _validate_confidence_pair(confidences, correct)
    if np.any(confidences < 0) or np.any(confidences > 1):
        raise ValidationError("confidences must lie in [0, 1]")
    n = confidences.shape[0]
    assignment = np.minimum((confidences * bins).astype(np.int64), bins - 1)
    total = 0.0
    for b in range(bins):
        in_bin = assignment == b
        n_b = int(in_bin.sum())
        if n_b == 0:
            continue
        gap = confidences[in_bin].mean() - correct[in_bin].mean()
        total += (n_b / n) * gap * gap
    return float(math.sqrt(total))
