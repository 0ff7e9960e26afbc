"""Detection metrics: FPR at a fixed TPR, AUROC, and AUPR.

In-distribution is the positive class throughout, and higher scores
mean more in-distribution. The fast paths here sort once, but each is
contractually equal to its quadratic/per-threshold definition:

  AUROC  = mean over all (in, out) pairs of [in > out] with ties worth 0.5
           (the Mann-Whitney statistic),
  AUPR   = average precision with tied scores entering as one group,
  FPR@q  = fraction of out-scores above the detector threshold
           calibrated on the in-scores at target TPR q.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .detector import calibrate_threshold
from .errors import InputError


@dataclass(frozen=True)
class ScoreSet:
    """Paired score samples: in-distribution (label 1) vs OOD (label 0)."""

    in_scores: np.ndarray
    out_scores: np.ndarray

    def __post_init__(self):
        for name in ("in_scores", "out_scores"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise InputError(f"{name} must be a non-empty 1-D sequence")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def n_in(self) -> int:
        return int(self.in_scores.size)

    @property
    def n_out(self) -> int:
        return int(self.out_scores.size)


@dataclass(frozen=True)
class MetricsReport:
    """Bundle of the three detection metrics for one score set."""

    fpr_at_tpr: float
    auroc: float
    aupr: float
    n_in: int
    n_out: int
    tpr_target: float

    def __post_init__(self):
        for name in ("fpr_at_tpr", "auroc", "aupr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {v}")

    def to_json_dict(self) -> dict:
        return {
            "fpr_at_tpr": self.fpr_at_tpr,
            "auroc": self.auroc,
            "aupr": self.aupr,
            "n_in": self.n_in,
            "n_out": self.n_out,
            "tpr_target": self.tpr_target,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    n = values.size
    change = np.nonzero(np.diff(sorted_vals))[0]
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [n - 1]))
    # (start + end)/2 + 1 is an exact multiple of 0.5
    group_mid = (starts + ends) / 2.0 + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_mid, ends - starts + 1)
    return ranks


def fpr_at_tpr(scores: ScoreSet, q: float) -> float:
    """Fraction of OOD scores above the threshold calibrated at TPR q."""
    cfg = calibrate_threshold(scores.in_scores, q)
    return float((scores.out_scores > cfg.tau).mean())


def auroc(scores: ScoreSet) -> float:
    """Mann-Whitney AUROC via midranks; ties count one half."""
    n_in, n_out = scores.n_in, scores.n_out
    combined = np.concatenate([scores.in_scores, scores.out_scores])
    ranks = _midranks(combined)
    rank_sum_in = ranks[:n_in].sum()
    return float((rank_sum_in - n_in * (n_in + 1) / 2.0) / (n_in * n_out))


def aupr(scores: ScoreSet) -> float:
    """Average precision, positives = in-distribution, ties grouped."""
    n_in = scores.n_in
    combined = np.concatenate([scores.in_scores, scores.out_scores])
    labels = np.concatenate([np.ones(n_in), np.zeros(scores.n_out)])
    desc = np.argsort(-combined, kind="mergesort")
    s_sorted = combined[desc]
    y_sorted = labels[desc]
    # index of the last element in each group of tied scores
    group_last = np.nonzero(np.concatenate((np.diff(s_sorted) != 0.0, [True])))[0]
    tp = np.cumsum(y_sorted)[group_last]
    total = group_last + 1.0
    precision = tp / total
    recall = tp / n_in
    delta_recall = np.diff(recall, prepend=0.0)
    return float(np.sum(precision * delta_recall))


def full_report(scores: ScoreSet, q: float) -> MetricsReport:
    """All three metrics at the given TPR target."""
    return MetricsReport(
        fpr_at_tpr=fpr_at_tpr(scores, q),
        auroc=auroc(scores),
        aupr=aupr(scores),
        n_in=scores.n_in,
        n_out=scores.n_out,
        tpr_target=float(q),
    )
