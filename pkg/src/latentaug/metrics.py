"""Ranking metrics: AUC, average precision, equal error rate, group-level AUC.

AUC uses the Mann-Whitney convention (ties count 1/2). EER is linearly
interpolated between the two thresholds bracketing the FAR = FRR crossing.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class MetricsReport:
    auc: float
    ap: float
    eer: float
    n_pos: int
    n_neg: int
    split: str = ""
    perturbation: str = "clean"

    def to_dict(self):
        return asdict(self)


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    return scores, labels, n_pos, n_neg


def auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counted 1/2."""
    scores, labels, n_pos, n_neg = _check(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty_like(scores)
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def ap(scores, labels) -> float:
    """Area under precision-recall by rank accumulation (ties grouped)."""
    scores, labels, n_pos, _ = _check(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # group indices where a new distinct score starts
    boundaries = np.flatnonzero(np.diff(s)) + 1
    ends = np.append(boundaries, len(s))  # cumulative counts at each threshold
    tp = np.cumsum(y)[ends - 1].astype(np.float64)
    total = ends.astype(np.float64)
    precision = tp / total
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def _far_frr_curve(scores, labels):
    """FAR/FRR at thresholds 'score >= t is fake', t over distinct scores + inf."""
    thresholds = np.concatenate([np.unique(scores), [np.inf]])
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    far = np.array([(neg >= t).mean() for t in thresholds])
    frr = np.array([(pos < t).mean() for t in thresholds])
    return far, frr


def eer(scores, labels) -> float:
    """Error rate at the FAR = FRR operating point, linearly interpolated."""
    scores, labels, _, _ = _check(scores, labels)
    far, frr = _far_frr_curve(scores, labels)
    diff = frr - far  # monotone nondecreasing in the threshold
    k = int(np.searchsorted(diff >= 0, True))
    if diff[k] == 0:
        return float(far[k])
    # interpolate between thresholds k-1 (diff < 0) and k (diff > 0)
    d0, d1 = diff[k - 1], diff[k]
    lam = -d0 / (d1 - d0)
    return float(far[k - 1] + lam * (far[k] - far[k - 1]))


def group_auc(scores, labels, group_ids) -> float:
    """AUC over per-group mean scores; every group must be label-uniform."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    group_ids = np.asarray(group_ids).ravel()
    g_scores, g_labels = [], []
    for g in np.unique(group_ids):
        mask = group_ids == g
        lab = np.unique(labels[mask])
        if len(lab) != 1:
            raise ValueError(f"group {g} mixes labels {lab.tolist()}")
        g_scores.append(scores[mask].mean())
        g_labels.append(int(lab[0]))
    return auc(np.array(g_scores), np.array(g_labels))


def report(scores, labels, split: str = "", perturbation: str = "clean") -> MetricsReport:
    scores, labels, n_pos, n_neg = _check(scores, labels)
    return MetricsReport(
        auc=auc(scores, labels),
        ap=ap(scores, labels),
        eer=eer(scores, labels),
        n_pos=n_pos,
        n_neg=n_neg,
        split=split,
        perturbation=perturbation,
    )
