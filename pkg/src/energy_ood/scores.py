"""Scoring functions over classifier logit vectors.

All scores share one convention established by the detector: higher
score = more in-distribution. The free-energy score itself runs the
other way (lower = more in-distribution), which is why the detector
side consumes ``neg_energy_score``.

Everything here is a pure function of its inputs, computed in float64,
and safe to call concurrently. Batch variants preserve row order.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError


def as_logits(values) -> np.ndarray:
    """Validate and convert a logit vector: 1-D, length >= 1, all finite."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"logit vector must be 1-D, got shape {arr.shape}")
    if arr.size < 1:
        raise InputError("logit vector must have at least one class")
    if not np.all(np.isfinite(arr)):
        raise InputError("logit vector contains non-finite entries")
    return arr


def as_logit_rows(values) -> np.ndarray:
    """Validate and convert a batch of logit vectors: 2-D (n, K), all finite."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"logit batch must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise InputError("logit batch must have at least one class column")
    if not np.all(np.isfinite(arr)):
        raise InputError("logit batch contains non-finite entries")
    return arr


def as_temperature(temp) -> float:
    """Validate a temperature: a finite positive float."""
    t = float(temp)
    if not math.isfinite(t) or t <= 0.0:
        raise InputError(f"temperature must be a positive finite number, got {temp!r}")
    return t


def _logsumexp(z: np.ndarray) -> float:
    # max-shift keeps exp() in range for any finite input
    m = float(z.max())
    return m + math.log(float(np.exp(z - m).sum()))


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return m[:, 0] + np.log(np.exp(z - m).sum(axis=1))


def energy_score(logits, temp=1.0) -> float:
    """Free energy of a logit vector: -T * log(sum_i exp(f_i / T)).

    Lower for in-distribution inputs under NLL-trained classifiers.
    Overflow-safe for any finite logits.
    """
    f = as_logits(logits)
    t = as_temperature(temp)
    return -t * _logsumexp(f / t)


def energy_scores(logit_rows, temp=1.0) -> np.ndarray:
    """Row-wise ``energy_score`` over a 2-D batch; output order = input order."""
    f = as_logit_rows(logit_rows)
    t = as_temperature(temp)
    return -t * _logsumexp_rows(f / t)


def neg_energy_score(logits, temp=1.0) -> float:
    """Negated free energy; higher = more in-distribution."""
    return -energy_score(logits, temp)


def neg_energy_scores(logit_rows, temp=1.0) -> np.ndarray:
    """Row-wise ``neg_energy_score``; output order = input order."""
    return -energy_scores(logit_rows, temp)


def label_energy(logits, label) -> float:
    """Energy of one (input, label) pair: the negated logit of that label."""
    f = as_logits(logits)
    idx = int(label)
    if idx != label:
        raise InputError(f"label must be an integer, got {label!r}")
    if not 0 <= idx < f.size:
        raise IndexError(f"label {idx} out of range for {f.size} classes")
    return -float(f[idx])


def softmax(logits, temp=1.0) -> np.ndarray:
    """Categorical distribution from logits at temperature T.

    Computed via max-shifted exponentials; entries are positive and sum
    to 1 within 1e-12.
    """
    f = as_logits(logits)
    t = as_temperature(temp)
    z = f / t
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logit_rows, temp=1.0) -> np.ndarray:
    """Row-wise ``softmax``; output order = input order."""
    f = as_logit_rows(logit_rows)
    t = as_temperature(temp)
    z = f / t
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def msp_score(logits) -> float:
    """Maximum softmax probability at T=1; the softmax-confidence baseline."""
    return float(softmax(logits, 1.0).max())


def msp_scores(logit_rows) -> np.ndarray:
    """Row-wise ``msp_score``; output order = input order."""
    return softmax_rows(logit_rows, 1.0).max(axis=1)
