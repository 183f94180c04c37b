"""Anomaly scoring and evaluation metrics.

The per-state anomaly score is the softmax-normalized preference for the
"anomalous" action. Ranking metrics (AUROC via the Mann-Whitney statistic
with 0.5 tie credit, AUPRC via step-wise summation) and the maximum Dice
operating point are computed over exhaustive threshold sweeps with a `>=`
prediction rule.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError, UndefinedMetricError

_SCORE_CLIP = 1e-12


def _softmax_anomalous(q: np.ndarray) -> np.ndarray:
    """P(a1) per row of a (B, 2) Q-value array, clipped into (0, 1)."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise NumericError("Q-values are not finite")
    shifted = q - q.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p1 = e[..., 1] / e.sum(axis=-1)
    return np.clip(p1, _SCORE_CLIP, 1.0 - _SCORE_CLIP)


def anomaly_score(net, state) -> float:
    """Softmax score for the anomalous action at one state, in (0, 1)."""
    return float(_softmax_anomalous(net.forward(state)))


def score_states(net, states) -> np.ndarray:
    """Anomaly scores for a (B, C) batch of states."""
    return _softmax_anomalous(net.forward_batch(states))


def score_map(net, fmap):
    """Per-position score grid plus the image-level score (max over pixels)."""
    scores = score_states(net, fmap.feature_matrix()).reshape(fmap.height, fmap.width)
    return scores, float(scores.max())


def _binary_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise InputError("scores and labels must have equal length")
    if len(scores) == 0:
        raise InputError("empty input")
    if not np.isin(labels, (0, 1)).all():
        raise InputError("labels must be 0 or 1")
    return scores, labels.astype(bool)


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties 0.5)."""
    scores, labels = _binary_arrays(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")

    # average ranks (1-based) with ties sharing their group mean
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg_rank = cum - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _threshold_sweep(scores, labels):
    """Cumulative TP/FP at each descending unique threshold (pred = score >= t)."""
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = labels[order].astype(np.int64)
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1 - sorted_pos)
    # last position of each unique-score block
    block_end = np.nonzero(np.diff(sorted_scores, append=np.nan))[0]
    return sorted_scores[block_end], tp[block_end], fp[block_end]


def auprc(scores, labels) -> float:
    """Area under precision-recall by step-wise summation over thresholds."""
    scores, labels = _binary_arrays(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")

    _, tp, fp = _threshold_sweep(scores, labels)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def max_dice(scores, labels):
    """Best Dice over all thresholds; returns (dice, threshold, sensitivity,
    specificity) at the lowest threshold achieving the maximum."""
    scores, labels = _binary_arrays(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0:
        raise UndefinedMetricError("Dice needs at least one positive")
    if n_neg == 0:
        raise UndefinedMetricError("specificity is undefined without negatives")

    thresholds, tp, fp = _threshold_sweep(scores, labels)
    fn = n_pos - tp
    dice = 2.0 * tp / (2.0 * tp + fp + fn)

    # last index of the maximum = lowest threshold achieving it
    best = int(len(dice) - 1 - np.argmax(dice[::-1]))
    tn = n_neg - fp[best]
    return (
        float(dice[best]),
        float(thresholds[best]),
        float(tp[best] / n_pos),
        float(tn / n_neg),
    )


@dataclass
class MetricsReport:
    """Image- and pixel-level detection metrics at the max-Dice threshold."""

    i_auroc: float
    i_auprc: float
    i_dice: float
    i_threshold: float
    i_sensitivity: float
    i_specificity: float
    p_auroc: float
    p_auprc: float
    p_dice: float
    p_threshold: float
    p_sensitivity: float
    p_specificity: float

    def to_json(self, n_seen_anomalies=None):
        doc = {
            "image": {
                "AUROC": self.i_auroc,
                "AUPRC": self.i_auprc,
                "DICE": self.i_dice,
                "Sensitivity": self.i_sensitivity,
                "Specificity": self.i_specificity,
                "threshold": self.i_threshold,
            },
            "pixel": {
                "AUROC": self.p_auroc,
                "AUPRC": self.p_auprc,
                "DICE": self.p_dice,
                "Sensitivity": self.p_sensitivity,
                "Specificity": self.p_specificity,
                "threshold": self.p_threshold,
            },
        }
        if n_seen_anomalies is not None:
            doc["n_seen_anomalies"] = int(n_seen_anomalies)
        return doc


def evaluate(net, entries_and_images) -> MetricsReport:
    """Full evaluation over (entry, image) pairs: pixel scores pooled across
    images, image scores = per-image max pixel score."""
    if not entries_and_images:
        raise InputError("nothing to evaluate")

    image_scores, image_labels = [], []
    pixel_scores, pixel_labels = [], []
    for entry, image in entries_and_images:
        grid, img_score = score_map(net, image)
        image_scores.append(img_score)
        image_labels.append(1 if entry.kind == "anomalous" else 0)
        pixel_scores.append(grid.ravel())
        pixel_labels.append(image.mask.ravel())

    i_scores = np.array(image_scores)
    i_labels = np.array(image_labels)
    p_scores = np.concatenate(pixel_scores)
    p_labels = np.concatenate(pixel_labels)

    i_dice, i_thr, i_sens, i_spec = max_dice(i_scores, i_labels)
    p_dice, p_thr, p_sens, p_spec = max_dice(p_scores, p_labels)
    return MetricsReport(
        i_auroc=auroc(i_scores, i_labels),
        i_auprc=auprc(i_scores, i_labels),
        i_dice=i_dice,
        i_threshold=i_thr,
        i_sensitivity=i_sens,
        i_specificity=i_spec,
        p_auroc=auroc(p_scores, p_labels),
        p_auprc=auprc(p_scores, p_labels),
        p_dice=p_dice,
        p_threshold=p_thr,
        p_sensitivity=p_sens,
        p_specificity=p_spec,
    )
