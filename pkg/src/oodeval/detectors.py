"""Anomaly scorers over precomputed classifier outputs.

Every scorer returns "higher = more anomalous".  Scorers whose textbook
definition is a confidence (max softmax probability, max logit, ...) are
negated here, once, so downstream metrics never have to branch on sign.

Probability matrices carry a ``mode`` tag: ``softmax`` rows sum to one,
``sigmoid`` entries are independent per-class probabilities.  Scorers that
only make sense for one mode raise :class:`~oodeval.errors.ModeError` on the
other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    InsufficientSamplesError,
    ModeError,
    ShapeError,
    ValidationError,
)

KL_EPS = 1e-12
SOFTMAX_MODE = "softmax"
SIGMOID_MODE = "sigmoid"


@dataclass(frozen=True)
class ProbMatrix:
    """N x C probability matrix tagged with how it was produced.

    ``softmax`` rows must sum to 1 (within 1e-6); ``sigmoid`` entries must
    each lie in [0, 1] but rows need not sum to anything in particular.
    """

    values: np.ndarray
    mode: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        _check_matrix(values, "probabilities")
        if self.mode not in (SOFTMAX_MODE, SIGMOID_MODE):
            raise ConfigError(f"unknown probability mode {self.mode!r}")
        if np.any(values < 0) or np.any(values > 1):
            raise ValidationError("probabilities must lie in [0, 1]")
        if self.mode == SOFTMAX_MODE:
            sums = values.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-6):
                raise ValidationError("softmax rows must sum to 1 (within 1e-6)")
        object.__setattr__(self, "values", values)

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ClassTemplates:
    """Per-predicted-class mean posterior rows, with their support counts."""

    templates: np.ndarray
    support_counts: np.ndarray

    def __post_init__(self):
        _check_stochastic_rows(self.templates, "templates")
        if np.asarray(self.support_counts).shape[0] != self.templates.shape[0]:
            raise ShapeError("one support count per template required")

    @property
    def n_classes(self) -> int:
        return self.templates.shape[1]


@dataclass(frozen=True)
class TypicalityMatrix:
    """C x C row-stochastic matrix of class-conditional mean outputs."""

    rows: np.ndarray
    threshold_build: float

    def __post_init__(self):
        _check_stochastic_rows(self.rows, "typicality matrix")
        if self.rows.shape[0] != self.rows.shape[1]:
            raise ShapeError(
                f"typicality matrix must be square, got {self.rows.shape}"
            )
        if not 0.0 < self.threshold_build < 1.0:
            raise ConfigError(
                f"build threshold must be in (0, 1), got {self.threshold_build}"
            )

    @property
    def n_classes(self) -> int:
        return self.rows.shape[0]


def _check_stochastic_rows(rows: np.ndarray, what: str) -> None:
    if rows.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        raise ValidationError(f"{what} contain non-finite values")
    if np.any(rows < 0):
        raise ValidationError(f"{what} contain negative entries")
    if np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError(f"{what} rows must sum to 1 (within 1e-9)")


def _check_matrix(values: np.ndarray, what: str) -> None:
    if values.ndim != 2:
        raise ShapeError(f"{what} must be 2-dimensional, got shape {values.shape}")
    if values.shape[1] < 2:
        raise ShapeError(f"{what} need at least 2 classes, got {values.shape[1]}")
    if not np.isfinite(values).all():
        raise ValidationError(f"{what} contain non-finite values")


def softmax(logits: np.ndarray) -> ProbMatrix:
    """Row-wise softmax with per-row max subtraction for stability.

    The max subtraction guarantees no overflow and preserves each row's
    argmax exactly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    _check_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return ProbMatrix(probs, SOFTMAX_MODE)


def sigmoid(logits: np.ndarray) -> ProbMatrix:
    """Elementwise logistic sigmoid, for multi-label outputs."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_matrix(logits, "logits")
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    expx = np.exp(logits[~pos])
    out[~pos] = expx / (1.0 + expx)
    return ProbMatrix(out, SIGMOID_MODE)


def msp_score(probs: ProbMatrix) -> np.ndarray:
    """Maximum-softmax-probability detector: score_i = -max_k p_ik.

    Only defined for softmax outputs; multi-label sigmoid outputs are not a
    distribution over classes, so they are rejected.
    """
    if probs.mode != SOFTMAX_MODE:
        raise ModeError(
            "msp requires softmax-mode probabilities; for multi-label outputs "
            "use maxlogit instead"
        )
    return -probs.values.max(axis=1)


def maxlogit_score(logits: np.ndarray) -> np.ndarray:
    """Max-logit detector: score_i = -max_k logit_ik.

    Unlike msp this needs no normalized distribution, so it applies to
    multi-label heads, and it keeps absolute cross-item differences that
    softmax normalization discards.
    """
    logits = np.asarray(logits, dtype=np.float64)
    _check_matrix(logits, "logits")
    return -logits.max(axis=1)


def logitavg_score(logits: np.ndarray) -> np.ndarray:
    """score_i = -mean_k logit_ik."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_matrix(logits, "logits")
    return -logits.mean(axis=1)


def background_score(probs: ProbMatrix, background_class: int) -> np.ndarray:
    """Posterior probability of a designated background class as the score."""
    background_class = int(background_class)
    if not 0 <= background_class < probs.n_classes:
        raise IndexError(
            f"background class {background_class} out of range for "
            f"{probs.n_classes} classes"
        )
    return probs.values[:, background_class].copy()


def kl_templates_fit(probs: ProbMatrix) -> ClassTemplates:
    """Build per-class posterior templates from softmax validation outputs.

    Template c is the normalized mean of all rows whose argmax is c (ties
    broken to the lowest class index).  A class with no supporting rows gets
    the uniform row and support count 0.
    """
    if probs.mode != SOFTMAX_MODE:
        raise ModeError("kl templates require softmax-mode probabilities")
    values = probs.values
    n_classes = probs.n_classes
    if values.shape[0] < 1:
        raise ShapeError("need at least one validation row")
    predicted = np.argmax(values, axis=1)
    templates = np.full((n_classes, n_classes), 1.0 / n_classes)
    support = np.zeros(n_classes, dtype=np.int64)
    for c in range(n_classes):
        rows = values[predicted == c]
        support[c] = rows.shape[0]
        if rows.shape[0] > 0:
            mean = rows.mean(axis=0)
            templates[c] = mean / mean.sum()
    return ClassTemplates(templates=templates, support_counts=support)


def _kl_divergence_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p_i || q_j) for all row pairs, with 0*log 0 := 0 and q floored."""
    q_safe = np.maximum(q, KL_EPS)
    log_p = np.where(p > 0, np.log(np.maximum(p, KL_EPS)), 0.0)
    # sum_k p_ik * (log p_ik - log q_jk)
    self_term = (p * log_p).sum(axis=1)
    cross = p @ np.log(q_safe).T
    return self_term[:, None] - cross


def kl_score(probs: ProbMatrix, templates: ClassTemplates) -> np.ndarray:
    """score_i = min_c KL(p_i || template_c), clipped at 0."""
    if probs.mode != SOFTMAX_MODE:
        raise ModeError("kl score requires softmax-mode probabilities")
    if probs.n_classes != templates.n_classes:
        raise ShapeError(
            f"probabilities have {probs.n_classes} classes but templates have "
            f"{templates.n_classes}"
        )
    divergences = _kl_divergence_rows(probs.values, templates.templates)
    # The epsilon floor on q can push KL a hair below zero; clip it out.
    return np.maximum(divergences.min(axis=1), 0.0)


def typicality_build(probs: ProbMatrix, threshold: float = 0.5) -> TypicalityMatrix:
    """Build the C x C typicality matrix from sigmoid validation outputs.

    Row c sums every output row whose class-c probability reaches
    ``threshold`` and normalizes the sum to 1.  Classes that never cross the
    threshold get the uniform row.  Selected rows are accumulated in a
    canonical (lexicographic) order so the result is bit-identical under any
    permutation of the validation set.
    """
    if probs.mode != SIGMOID_MODE:
        raise ModeError("typicality matrix requires sigmoid-mode probabilities")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    values = probs.values
    n_classes = probs.n_classes
    rows = np.full((n_classes, n_classes), 1.0 / n_classes)
    for c in range(n_classes):
        selected = values[values[:, c] >= threshold]
        if selected.shape[0] == 0:
            continue
        order = np.lexsort(selected.T[::-1])
        total = selected[order].sum(axis=0)
        rows[c] = total / total.sum()
    return TypicalityMatrix(rows=rows, threshold_build=float(threshold))


def typicality_score(
    probs: ProbMatrix,
    matrix: TypicalityMatrix,
    threshold: float | None = None,
    distance: str = "l1",
    fallback: str = "argmax",
) -> np.ndarray:
    """Distance of each output to the typical output of its triggered classes.

    For every class whose probability reaches ``threshold`` (default: the
    matrix's build threshold) the L1 distance between the normalized output
    row and that class's typicality row is accumulated.  When no class
    triggers, ``fallback`` decides: ``argmax`` measures against the row of
    the highest-probability class, ``zero`` emits 0.
    """
    if probs.mode != SIGMOID_MODE:
        raise ModeError("typicality score requires sigmoid-mode probabilities")
    if probs.n_classes != matrix.n_classes:
        raise ShapeError(
            f"probabilities have {probs.n_classes} classes but matrix has "
            f"{matrix.n_classes}"
        )
    if threshold is None:
        threshold = matrix.threshold_build
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    if distance not in ("l1", "l2"):
        raise ConfigError(f"unknown distance {distance!r} (expected l1 or l2)")
    if fallback not in ("argmax", "zero"):
        raise ConfigError(f"unknown fallback {fallback!r} (expected argmax or zero)")

    values = probs.values
    sums = values.sum(axis=1, keepdims=True)
    normalized = np.where(sums > 0, values / np.where(sums > 0, sums, 1.0),
                          1.0 / probs.n_classes)
    diff = normalized[:, None, :] - matrix.rows[None, :, :]
    if distance == "l1":
        dist = np.abs(diff).sum(axis=2)
    else:
        dist = np.sqrt((diff * diff).sum(axis=2))

    triggered = values >= threshold
    scores = (dist * triggered).sum(axis=1)
    missing = ~triggered.any(axis=1)
    if fallback == "argmax" and missing.any():
        idx = np.flatnonzero(missing)
        best = np.argmax(values[idx], axis=1)
        scores[idx] = dist[idx, best]
    return scores


def dropout_variance_score(prob_stack: np.ndarray, aggregate: str = "mean") -> np.ndarray:
    """Epistemic-uncertainty score from K stochastic forward passes.

    ``prob_stack`` is (K, N, C).  The population variance across the K
    samples is computed per class, then aggregated over classes (``mean`` by
    default, ``max`` optionally).
    """
    prob_stack = np.asarray(prob_stack, dtype=np.float64)
    if prob_stack.ndim != 3:
        raise ShapeError(f"expected (K, N, C) stack, got shape {prob_stack.shape}")
    if prob_stack.shape[0] < 2:
        raise InsufficientSamplesError(
            f"variance needs at least 2 samples, got {prob_stack.shape[0]}"
        )
    if not np.isfinite(prob_stack).all():
        raise ValidationError("probability stack contains non-finite values")
    variances = prob_stack.var(axis=0, ddof=0)
    if aggregate == "mean":
        return variances.mean(axis=1)
    if aggregate == "max":
        return variances.max(axis=1)
    raise ConfigError(f"unknown aggregate {aggregate!r} (expected mean or max)")


def ae_recon_score(image: np.ndarray, reconstruction: np.ndarray) -> np.ndarray:
    """Per-pixel reconstruction error: mean over channels of |input - recon|."""
    image = np.asarray(image, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    if image.shape != reconstruction.shape:
        raise ShapeError(
            f"image shape {image.shape} != reconstruction shape {reconstruction.shape}"
        )
    if image.ndim != 3:
        raise ShapeError(f"expected (H, W, C) images, got shape {image.shape}")
    return np.abs(image - reconstruction).mean(axis=2)


SEG_METHODS = ("msp", "maxlogit", "background")


def seg_scores(logit_map: np.ndarray, method: str,
               background_class: int | None = None) -> np.ndarray:
    """Apply a whole-image scorer independently at every pixel.

    ``logit_map`` is (H, W, C) raw logits; the result is an (H, W) score map
    under the same higher-is-more-anomalous convention.
    """
    logit_map = np.asarray(logit_map, dtype=np.float64)
    if logit_map.ndim != 3:
        raise ShapeError(f"expected (H, W, C) logit map, got shape {logit_map.shape}")
    height, width, n_classes = logit_map.shape
    flat = logit_map.reshape(height * width, n_classes)
    if method == "maxlogit":
        scores = maxlogit_score(flat)
    elif method == "msp":
        scores = msp_score(softmax(flat))
    elif method == "background":
        if background_class is None:
            raise ConfigError("background method needs a background_class")
        scores = background_score(softmax(flat), background_class)
    else:
        raise ConfigError(f"unknown method {method!r} (expected one of {SEG_METHODS})")
    return scores.reshape(height, width)
