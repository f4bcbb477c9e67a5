"""Localization and counting metrics.

Predicted points match ground-truth heads one-to-one inside a per-head
radius: the circumradius sigma of the annotated w x h box. The matcher
maximizes the number of matches first and total distance second, realized
as a min-cost assignment where every infeasible pair costs more than all
feasible distances combined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "HeadAnnotation",
    "MatchResult",
    "LocalizationMetrics",
    "CountingMetrics",
    "sigma_from_box",
    "match_points",
    "f1_from_pr",
    "localization_metrics",
    "counting_metrics",
    "format_report",
]


def sigma_from_box(w, h):
    """Circumradius of a w x h box: sqrt(w^2 + h^2) / 2."""
    if w <= 0 or h <= 0:
        raise ValueError(f"box dims must be positive, got {w}x{h}")
    return math.sqrt(w * w + h * h) / 2.0


@dataclass(frozen=True)
class HeadAnnotation:
    """One ground-truth head: center point plus box size."""

    x: float
    y: float
    w: float
    h: float

    @property
    def sigma(self):
        return sigma_from_box(self.w, self.h)


@dataclass(frozen=True)
class MatchResult:
    """Index-based match outcome; every id lands in exactly one bucket."""

    tp_pairs: tuple  # ((pred_idx, gt_idx), ...)
    fp: tuple  # unmatched pred indices
    fn: tuple  # unmatched gt indices
    total_distance: float

    @property
    def tp(self):
        return len(self.tp_pairs)


@dataclass(frozen=True)
class LocalizationMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class CountingMetrics:
    mae: float
    mse: float  # root of the mean squared error
    nae: float


def match_points(preds, gts):
    """One-to-one matching of predicted points to annotated heads.

    A pair is feasible when the point lies within the head's sigma
    (boundary inclusive). Among assignments with the most feasible
    pairs, the one with the least total distance wins.
    """
    preds = [(float(x), float(y)) for x, y in preds]
    n_p, n_g = len(preds), len(gts)
    if n_p == 0 or n_g == 0:
        return MatchResult((), tuple(range(n_p)), tuple(range(n_g)), 0.0)

    px = np.array([p[0] for p in preds])
    py = np.array([p[1] for p in preds])
    gx = np.array([g.x for g in gts])
    gy = np.array([g.y for g in gts])
    sig = np.array([g.sigma for g in gts])
    dist = np.sqrt((px[:, None] - gx[None, :]) ** 2 + (py[:, None] - gy[None, :]) ** 2)
    feasible = dist <= sig[None, :]

    # any full-size penalty beats every possible sum of feasible distances,
    # so the assignment trades one more match for any amount of distance
    big = float(dist[feasible].sum()) + 1.0
    cost = np.where(feasible, dist, big)
    rows, cols = linear_sum_assignment(cost)

    tp_pairs = []
    total = 0.0
    matched_p, matched_g = set(), set()
    for i, j in zip(rows, cols):
        if feasible[i, j]:
            tp_pairs.append((int(i), int(j)))
            total += float(dist[i, j])
            matched_p.add(int(i))
            matched_g.add(int(j))
    fp = tuple(i for i in range(n_p) if i not in matched_p)
    fn = tuple(j for j in range(n_g) if j not in matched_g)
    return MatchResult(tuple(tp_pairs), fp, fn, total)


def f1_from_pr(precision, recall):
    """Harmonic mean (beta = 1); zero when both rates are zero."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def localization_metrics(match):
    """Precision, recall, F1 (beta = 1); zero denominators give 0."""
    tp, fp, fn = match.tp, len(match.fp), len(match.fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return LocalizationMetrics(precision, recall, f1_from_pr(precision, recall))


def counting_metrics(gt_counts, pred_counts):
    """MAE, root-MSE, and NAE over per-image counts.

    NAE averages |error| / count over images with a nonzero ground-truth
    count only; an all-zero ground truth yields NAE 0.
    """
    if len(gt_counts) != len(pred_counts):
        raise ValueError(
            f"count lists differ in length: {len(gt_counts)} vs {len(pred_counts)}"
        )
    if not gt_counts:
        raise ValueError("counting metrics need at least one image")
    y = np.asarray(gt_counts, dtype=np.float64)
    yhat = np.asarray(pred_counts, dtype=np.float64)
    err = np.abs(y - yhat)
    mae = float(err.mean())
    mse = float(np.sqrt((err**2).mean()))
    positive = y > 0
    nae = float((err[positive] / y[positive]).mean()) if positive.any() else 0.0
    return CountingMetrics(mae, mse, nae)


def format_report(loc, cnt, extra=None):
    """Readable table plus machine-readable key=value lines."""
    rows = [
        ("precision", loc.precision),
        ("recall", loc.recall),
        ("f1", loc.f1),
        ("mae", cnt.mae),
        ("mse", cnt.mse),
        ("nae", cnt.nae),
    ]
    if extra:
        rows.extend(extra.items())
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value:10.4f}" for name, value in rows]
    lines.append("")
    lines.extend(f"metric.{name} = {value:.6f}" for name, value in rows)
    return "\n".join(lines) + "\n"
