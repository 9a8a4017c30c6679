"""Verification metrics: AUC-ROC, TNR@TPR95 and expected calibration error.

These are the quantities the whole experiment is judged on, so the
implementations favor exactness over speed: AUC uses the rank formulation
with half-credit ties (identical to exhaustive pair counting), and the
TNR threshold is resolved with integer-exact feasibility checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ContractError(f"labels must be 1-D, got shape {labels.shape}")
    values = set(np.unique(labels).tolist())
    if not values <= {0, 1}:
        raise ContractError(f"labels must be binary 0/1, got values {sorted(values)}")
    if values != {0, 1}:
        raise ContractError("both classes must be present")
    return labels.astype(np.int64)


def auc_roc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outscores a random negative, ties at
    half credit. Computed from average ranks; exact for any tie pattern."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    if scores.shape != labels.shape:
        raise ContractError(f"scores {scores.shape} and labels {labels.shape} differ")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    below = np.concatenate([[0], np.cumsum(counts)[:-1]])
    ranks = below[inverse] + (counts[inverse] + 1) / 2.0
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def tnr_at_tpr(scores: np.ndarray, labels: np.ndarray, target: float = 0.95) -> float:
    """True-negative rate at the loosest threshold whose TPR is >= target.

    Predictions are score >= threshold. The threshold is the m-th largest
    positive score with m the smallest integer satisfying m / P >= target;
    the integer feasibility check avoids float rounding on m.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    if not 0.0 < target <= 1.0:
        raise ContractError(f"target TPR {target} outside (0, 1]")
    pos = np.sort(scores[labels == 1])[::-1]
    neg = scores[labels == 0]
    n_pos = len(pos)
    m = int(np.ceil(target * n_pos))
    while m > 1 and (m - 1) / n_pos >= target:
        m -= 1
    while m / n_pos < target:
        m += 1
    threshold = pos[m - 1]
    return float(np.mean(neg < threshold))


def ece(probs: np.ndarray, labels: np.ndarray, n_bins: int = 15) -> float:
    """Expected calibration error over equal-width confidence bins.

    Confidence is the max class probability; a prediction lands in bin
    floor(conf * n_bins), with conf = 1.0 folded into the last bin. The
    result is the sample-weighted mean |accuracy - confidence| over bins.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise ContractError(f"probs {probs.shape} vs labels {labels.shape}")
    if len(probs) == 0:
        raise ContractError("ece of an empty set")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("probability rows must sum to 1 within 1e-6")
    if n_bins <= 0:
        raise ContractError(f"n_bins must be positive, got {n_bins}")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    bins = np.minimum((conf * n_bins).astype(np.int64), n_bins - 1)
    total = 0.0
    n = len(labels)
    for b in range(n_bins):
        members = bins == b
        count = int(members.sum())
        if count == 0:
            continue
        gap = abs(correct[members].mean() - conf[members].mean())
        total += (count / n) * gap
    return float(total)


@dataclass(frozen=True)
class DetectionResult:
    """OOD-detection summary for one detector score."""

    auc: float
    tnr_at_tpr95: float


def ood_detection(
    id_scores: np.ndarray,
    ood_scores: np.ndarray,
    high_is_ood: bool = True,
) -> DetectionResult:
    """Score a detector that separates in-distribution from OOD samples.

    OOD is the positive class. `high_is_ood` declares the direction of the
    score; when False the scores are negated so higher always means OOD.
    """
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if len(id_scores) == 0 or len(ood_scores) == 0:
        raise ContractError("both iD and OOD score arrays must be non-empty")
    scores = np.concatenate([id_scores, ood_scores])
    if not high_is_ood:
        scores = -scores
    labels = np.concatenate(
        [np.zeros(len(id_scores), dtype=np.int64), np.ones(len(ood_scores), dtype=np.int64)]
    )
    return DetectionResult(
        auc=auc_roc(scores, labels),
        tnr_at_tpr95=tnr_at_tpr(scores, labels, 0.95),
    )


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 accuracy of probability rows against integer labels."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if len(probs) == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean(probs.argmax(axis=1) == labels))
