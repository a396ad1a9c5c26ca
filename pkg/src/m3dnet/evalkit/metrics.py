"""Rank-based AUC and ROC curves."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..errors import InvalidInputError, UndefinedAUCError

_LABELS = {"real": 0, "fake": 1, 0: 0, 1: 1, False: 0, True: 1}


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    try:
        y = np.array([_LABELS[v.item() if hasattr(v, "item") else v] for v in labels], dtype=np.int64)
    except KeyError as exc:
        raise InvalidInputError(f"labels must be real/fake or 0/1, got {exc.args[0]!r}") from None
    if s.shape[0] != y.shape[0]:
        raise InvalidInputError(f"{s.shape[0]} scores but {y.shape[0]} labels")
    if not np.isfinite(s).all():
        raise InvalidInputError("scores must be finite")
    n_fake = int(y.sum())
    if n_fake == 0 or n_fake == len(y):
        raise UndefinedAUCError(f"AUC needs both classes, got {len(y) - n_fake} real / {n_fake} fake")
    return s, y


def compute_auc(scores, labels) -> float:
    """P(score_fake > score_real) with ties counted 1/2 (Mann-Whitney U / n1 n0).

    Computed from mid-ranks, which is exact for ties: the rank sum of the
    fakes minus its minimum value is exactly U.
    """
    s, y = _as_arrays(scores, labels)
    n1 = int(y.sum())
    n0 = len(y) - n1
    ranks = rankdata(s)  # average ranks for ties, all multiples of 1/2
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2
    return float(u / (n1 * n0))


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) points from (0, 0) to (1, 1), one per distinct score.

    A sample counts as predicted fake when its score is >= threshold. The
    first point uses threshold +inf.
    """
    s, y = _as_arrays(scores, labels)
    n1 = int(y.sum())
    n0 = len(y) - n1
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    last_of_run = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1]
    points = [(0.0, 0.0, float("inf"))]
    for i in last_of_run:
        points.append((float(fp[i] / n0), float(tp[i] / n1), float(s_sorted[i])))
    return points


def trapezoid_auc(points: list[tuple[float, float, float]]) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
