"""Threshold calibration and the binary in/out-of-distribution detector.

The detector works on a score axis where higher means more
in-distribution. Calibration picks the threshold ``tau`` on
in-distribution scores so that at least the requested fraction of them
is accepted; the boundary itself (score == tau) rejects, matching the
strict inequality in the decision rule. ``tau`` may be ``-inf``, the
sentinel that accepts every sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .scores import as_logits, as_temperature, msp_score, neg_energy_score

SCORE_KINDS = ("neg_energy", "msp", "neg_energy_gda", "mahalanobis")

# Score kinds computable from classifier logits alone (the GDA kinds
# need a fitted feature-space model instead).
LOGIT_SCORE_KINDS = ("neg_energy", "msp")


@dataclass(frozen=True)
class DetectorConfig:
    """Calibrated score threshold plus the TPR target it was calibrated for."""

    tau: float
    target_tpr: float
    score_kind: str = "neg_energy"

    def __post_init__(self):
        if not 0.0 < self.target_tpr <= 1.0:
            raise InputError(f"target_tpr must be in (0, 1], got {self.target_tpr}")
        if math.isnan(self.tau) or self.tau == math.inf:
            raise InputError(f"tau must be a real number or -inf, got {self.tau}")
        if self.score_kind not in SCORE_KINDS:
            raise InputError(f"unknown score_kind {self.score_kind!r}")

    def to_json_dict(self) -> dict:
        tau = "-inf" if self.tau == -math.inf else self.tau
        return {"tau": tau, "target_tpr": self.target_tpr, "score_kind": self.score_kind}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DetectorConfig":
        try:
            tau = doc["tau"]
            target_tpr = float(doc["target_tpr"])
            score_kind = str(doc["score_kind"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed detector config: {exc}") from exc
        if tau == "-inf":
            tau = -math.inf
        return cls(tau=float(tau), target_tpr=target_tpr, score_kind=score_kind)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DetectorConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class Decision:
    """One detector verdict: label 1 = in-distribution, 0 = rejected."""

    label: int
    score: float


def _as_scores(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InputError("scores must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise InputError("scores contain non-finite entries")
    return arr


def calibrate_threshold(in_scores, target_tpr, score_kind="neg_energy") -> DetectorConfig:
    """Choose tau on in-distribution scores so achieved TPR >= target_tpr.

    With N scores and k = floor(N * (1 - target_tpr)): tau is the k-th
    smallest score (or -inf when k = 0). If ties push the achieved TPR
    (fraction strictly above tau) below the target, tau drops to the
    next distinct smaller value, down to -inf. Overshooting the target
    is acceptable; undershooting never is.
    """
    s = _as_scores(in_scores)
    q = float(target_tpr)
    if not 0.0 < q <= 1.0:
        raise InputError(f"target_tpr must be in (0, 1], got {target_tpr}")
    n = s.size
    k = int(math.floor(n * (1.0 - q)))
    if k <= 0:
        tau = -math.inf
    else:
        srt = np.sort(s)
        tau = float(srt[k - 1])
        while tau != -math.inf and float((s > tau).mean()) < q:
            smaller = srt[srt < tau]
            tau = float(smaller[-1]) if smaller.size else -math.inf
    return DetectorConfig(tau=tau, target_tpr=q, score_kind=score_kind)


def achieved_tpr(in_scores, cfg: DetectorConfig) -> float:
    """Fraction of in-distribution scores the detector accepts."""
    s = _as_scores(in_scores)
    return float((s > cfg.tau).mean())


def classify(score, cfg: DetectorConfig) -> Decision:
    """Accept iff score > tau (strict); the boundary goes to OOD."""
    sc = float(score)
    if math.isnan(sc):
        raise InputError("cannot classify a NaN score")
    return Decision(label=1 if sc > cfg.tau else 0, score=sc)


def filter_and_predict(logits, cfg: DetectorConfig, temp=1.0):
    """Filter-then-classify: None when rejected, else the argmax class.

    Ties in the argmax break toward the lowest class index, and the
    class output is unaffected by logit shifts or temperature.
    """
    if cfg.score_kind not in LOGIT_SCORE_KINDS:
        raise InputError(
            f"filter_and_predict needs a logit-based score_kind, got {cfg.score_kind!r}"
        )
    f = as_logits(logits)
    t = as_temperature(temp)
    if cfg.score_kind == "neg_energy":
        score = neg_energy_score(f, t)
    else:
        score = msp_score(f)
    if classify(score, cfg).label == 0:
        return None
    return int(np.argmax(f))
