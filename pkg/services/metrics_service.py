"""
Metrics Service
Dice, rank AUC, ROC, sensitivity/specificity, location accuracy and the
DeLong test for two correlated AUCs
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from sklearn import metrics as sk_metrics

from config import DELONG_VARIANCE_FLOOR, NUM_LOCATION_BINS, SCORE_CUTOFF
from exceptions import RejectedInputError, UndefinedMetricError
from models.eval_models import DeLongResult, ScoreSet

# Per-location Dice groups: upper/middle/lower body vs the junction bin
LOCATION_GROUPS: Dict[str, Tuple[int, ...]] = {
    "eso": tuple(range(1, NUM_LOCATION_BINS)),
    "egj": (NUM_LOCATION_BINS,),
}


# ==============================================================================
# SEGMENTATION
# ==============================================================================

def dice_score(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """2|P n G| / (|P| + |G|); two empty masks score 1"""
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise RejectedInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pred, gt = pred.astype(bool), gt.astype(bool)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / total


def mean_case_dice(pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> Optional[float]:
    """Per-case mean over cases whose ground truth is non-empty; None if there are none"""
    values = [dice_score(p, g) for p, g in pairs if np.any(g)]
    return float(np.mean(values)) if values else None


def dice_by_location(pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
                     locations: Sequence[int]) -> Dict[str, Optional[float]]:
    grouped = {}
    for group, bins in LOCATION_GROUPS.items():
        grouped[group] = mean_case_dice([pair for pair, loc in zip(pairs, locations) if loc in bins])
    return grouped


# ==============================================================================
# DETECTION
# ==============================================================================

def _arrays(scoreset: ScoreSet) -> Tuple[np.ndarray, np.ndarray]:
    return np.asarray(scoreset.scores, dtype=np.float64), np.asarray(scoreset.labels, dtype=np.int64)


def _require_both_classes(labels: np.ndarray, metric: str) -> Tuple[int, int]:
    m = int((labels == 1).sum())
    n = int((labels == 0).sum())
    if m == 0 or n == 0:
        raise UndefinedMetricError(f"{metric} needs both classes, got {m} positive / {n} negative")
    return m, n


def auc(scoreset: ScoreSet) -> float:
    """Mann-Whitney estimate from midranks; ties count one half"""
    scores, labels = _arrays(scoreset)
    m, n = _require_both_classes(labels, "AUC")
    ranks = stats.rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - m * (m + 1) / 2) / (m * n))


def roc_curve(scoreset: ScoreSet) -> List[Tuple[float, float]]:
    """(FPR, TPR) staircase over every distinct threshold, (0, 0) through (1, 1)"""
    points, _ = roc_curve_with_thresholds(scoreset)
    return points


def roc_curve_with_thresholds(scoreset: ScoreSet) -> Tuple[List[Tuple[float, float]], List[float]]:
    scores, labels = _arrays(scoreset)
    _require_both_classes(labels, "ROC")
    fpr, tpr, thresholds = sk_metrics.roc_curve(labels, scores, drop_intermediate=False)
    points = [(float(f), float(t)) for f, t in zip(fpr, tpr)]
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
        thresholds = np.append(thresholds, -np.inf)
    return points, [float(t) for t in thresholds]


def trapezoid_area(points: Sequence[Tuple[float, float]]) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))


def sens_spec(scoreset: ScoreSet, cutoff: float = SCORE_CUTOFF) -> Tuple[float, float]:
    """Prediction is positive when score >= cutoff"""
    scores, labels = _arrays(scoreset)
    m, n = _require_both_classes(labels, "sensitivity/specificity")
    predicted = scores >= cutoff
    tp = int(np.sum(predicted & (labels == 1)))
    tn = int(np.sum(~predicted & (labels == 0)))
    return tp / m, tn / n


def predict_location(similarities: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; np.argmax already resolves ties to the lowest index"""
    return np.argmax(np.asarray(similarities), axis=-1)


def location_accuracy(pred_bins: Sequence[int], true_bins: Sequence[int]) -> float:
    pred = np.asarray(pred_bins)
    true = np.asarray(true_bins)
    if pred.shape != true.shape:
        raise RejectedInputError(f"prediction and label counts differ: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise UndefinedMetricError("location accuracy of an empty set")
    if pred.min() < 0 or true.min() < 0 or max(pred.max(), true.max()) > NUM_LOCATION_BINS:
        raise RejectedInputError(f"location bins must lie in [0..{NUM_LOCATION_BINS}]")
    return float(np.mean(pred == true))


# ==============================================================================
# DELONG
# ==============================================================================

def delong_placements(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    (AUC, V10, V01) by midranks. V10[i] is the fraction of negatives scored
    below positive i (ties one half); V01[j] the fraction of positives scored
    above negative j.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    m, n = _require_both_classes(labels, "DeLong")
    pos, neg = scores[labels == 1], scores[labels == 0]
    rank_all = stats.rankdata(np.concatenate([pos, neg]))
    rank_pos, rank_neg = stats.rankdata(pos), stats.rankdata(neg)
    v10 = (rank_all[:m] - rank_pos) / n
    v01 = 1.0 - (rank_all[m:] - rank_neg) / m
    return float(v10.mean()), v10, v01


def delong_covariance(scores_a: np.ndarray, scores_b: np.ndarray,
                      labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """AUCs of both classifiers and their 2x2 covariance S10/m + S01/n"""
    auc_a, v10_a, v01_a = delong_placements(scores_a, labels)
    auc_b, v10_b, v01_b = delong_placements(scores_b, labels)
    m, n = v10_a.size, v01_a.size
    s10 = np.cov(np.vstack([v10_a, v10_b]), ddof=1) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(np.vstack([v01_a, v01_b]), ddof=1) if n > 1 else np.zeros((2, 2))
    return np.array([auc_a, auc_b]), s10 / m + s01 / n


def delong_test(scoreset_a: ScoreSet, scoreset_b: ScoreSet) -> DeLongResult:
    """Two-sided test of AUC(a) = AUC(b) on the same records"""
    if scoreset_a.labels != scoreset_b.labels:
        raise RejectedInputError("DeLong needs identical labels for both score sets")
    if scoreset_a.ids != scoreset_b.ids:
        raise RejectedInputError("DeLong needs both score sets over the same records in the same order")

    scores_a, labels = _arrays(scoreset_a)
    scores_b, _ = _arrays(scoreset_b)
    aucs, cov = delong_covariance(scores_a, scores_b, labels)
    contrast = np.array([1.0, -1.0])
    variance = float(contrast @ cov @ contrast)
    difference = float(aucs[0] - aucs[1])

    if variance <= DELONG_VARIANCE_FLOOR:
        z = 0.0 if difference == 0 else math.copysign(math.inf, difference)
        p_value = 1.0 if difference == 0 else 0.0
    else:
        z = difference / math.sqrt(variance)
        p_value = float(2 * stats.norm.sf(abs(z)))
    return DeLongResult(auc_a=float(aucs[0]), auc_b=float(aucs[1]), z=z, p_value=min(p_value, 1.0),
                        variance=variance)
