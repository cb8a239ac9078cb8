"""AUROC, average precision, recall at fixed precision, and the curves behind them.

Thresholds are the distinct score values; a prediction is positive when its
score is >= the threshold, so tied scores always move together.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ScoredPredictions:
    scores: tuple[float, ...]
    labels: tuple[int, ...]

    def __init__(self, scores: Sequence[float], labels: Sequence[int]):
        scores = tuple(float(s) for s in scores)
        labels = tuple(int(y) for y in labels)
        if len(scores) != len(labels):
            raise ValueError(f"{len(scores)} scores but {len(labels)} labels")
        if any(y not in (0, 1) for y in labels):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def n_pos(self) -> int:
        return sum(self.labels)

    @property
    def n_neg(self) -> int:
        return len(self.labels) - self.n_pos


def _require_both(sp: ScoredPredictions, what: str) -> None:
    if sp.n_pos == 0 or sp.n_neg == 0:
        raise ValueError(f"{what} needs at least one positive and one negative")


def _threshold_counts(sp: ScoredPredictions):
    """Distinct thresholds (descending) with cumulative TP/FP counts at each."""
    s = np.asarray(sp.scores)
    y = np.asarray(sp.labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return s[last], tp, fp


def auroc(sp: ScoredPredictions) -> float:
    """Mann-Whitney statistic from mid-ranks: P(s+ > s-) + P(s+ = s-)/2."""
    _require_both(sp, "auroc")
    s = np.asarray(sp.scores)
    y = np.asarray(sp.labels, dtype=bool)
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    starts = np.r_[0, np.nonzero(np.diff(sorted_s))[0] + 1]
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + 1 + b) / 2.0
    n_pos, n_neg = sp.n_pos, sp.n_neg
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(sp: ScoredPredictions) -> float:
    """Average precision, sum over thresholds of (R_n - R_{n-1}) * P_n."""
    if sp.n_pos == 0:
        raise ValueError("auprc needs at least one positive")
    _, tp, fp = _threshold_counts(sp)
    recall = tp / sp.n_pos
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def recall_at_precision(sp: ScoredPredictions, min_precision: float = 0.8) -> float:
    """Largest recall over thresholds whose precision is at least ``min_precision``; 0 if none."""
    _require_both(sp, "recall_at_precision")
    target = Fraction(str(min_precision))
    _, tp, fp = _threshold_counts(sp)
    ok = tp * target.denominator >= target.numerator * (tp + fp)
    return float(tp[ok].max() / sp.n_pos) if ok.any() and tp[ok].max() > 0 else 0.0


def rp80(sp: ScoredPredictions) -> float:
    return recall_at_precision(sp, 0.8)


@dataclass(frozen=True)
class RocCurve:
    thresholds: tuple[float, ...]
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]

    def area(self) -> float:
        x, y = np.asarray(self.fpr), np.asarray(self.tpr)
        return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))

    def rows(self):
        return zip(self.thresholds, self.fpr, self.tpr)


@dataclass(frozen=True)
class PrCurve:
    thresholds: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]

    def rows(self):
        return zip(self.thresholds, self.recall, self.precision)


def roc_curve(sp: ScoredPredictions) -> RocCurve:
    """Points in order of decreasing threshold, starting at the (+inf, 0, 0) sentinel."""
    _require_both(sp, "roc_curve")
    th, tp, fp = _threshold_counts(sp)
    return RocCurve(
        thresholds=(float("inf"), *th.tolist()),
        fpr=(0.0, *(fp / sp.n_neg).tolist()),
        tpr=(0.0, *(tp / sp.n_pos).tolist()),
    )


def pr_curve(sp: ScoredPredictions) -> PrCurve:
    """Points in order of increasing threshold, starting at the (-inf, prevalence, 1) sentinel."""
    _require_both(sp, "pr_curve")
    th, tp, fp = _threshold_counts(sp)
    prevalence = sp.n_pos / len(sp)
    return PrCurve(
        thresholds=(float("-inf"), *th[::-1].tolist()),
        precision=(prevalence, *(tp / (tp + fp))[::-1].tolist()),
        recall=(1.0, *(tp / sp.n_pos)[::-1].tolist()),
    )


def write_curve_csv(curve, path, x_name: str, y_name: str) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", x_name, y_name])
        for t, x, y in curve.rows():
            w.writerow([repr(t), repr(x), repr(y)])


def evaluate(sp: ScoredPredictions) -> dict[str, float]:
    return {"auroc": auroc(sp), "auprc": auprc(sp), "rp80": rp80(sp)}
