"""Brute-force reference implementations, deliberately independent of medaug.metrics."""

from fractions import Fraction


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def _counts_at(scores, labels, t):
    tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
    fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
    return tp, fp


def step_sum_ap(scores, labels):
    n_pos = sum(labels)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp, fp = _counts_at(scores, labels, t)
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / (tp + fp))
        prev_recall = recall
    return ap


def threshold_scan_rp(scores, labels, min_precision=Fraction(4, 5)):
    n_pos = sum(labels)
    best = Fraction(0)
    for t in set(scores):
        tp, fp = _counts_at(scores, labels, t)
        if tp and Fraction(tp, tp + fp) >= min_precision:
            best = max(best, Fraction(tp, n_pos))
    return float(best)


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar f over a flat list x."""
    grad = []
    for i in range(len(x)):
        hi = list(x)
        lo = list(x)
        hi[i] += h
        lo[i] -= h
        grad.append((f(hi) - f(lo)) / (2 * h))
    return grad
