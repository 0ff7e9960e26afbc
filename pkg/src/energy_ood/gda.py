"""Gaussian discriminant analysis over feature vectors.

All classes share one covariance (the LDA assumption). The posterior
uses the exponent exp(-d_c + ln pi_c) with d_c the squared Mahalanobis
distance to the class mean. Note the deliberate absence of the usual
1/2 factor: the shared-covariance determinant cancels between classes,
and the missing 1/2 simply rescales every distance, a convention the
energy formula below inherits. The posterior-weighted energy is

    E_U(x) = sum_c [d_c(x) + ln pi_c] * p(c | x)

and the Mahalanobis baseline score is -min_c d_c(x), so higher means
more in-distribution.

Solves go through a stored Cholesky factor; the covariance is never
inverted explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InputError, NumericalError

GDA_FORMAT = "energy-ood-gda"
GDA_VERSION = 1


@dataclass
class GdaModel:
    """Class means, shared SPD covariance (with factorization), priors."""

    means: np.ndarray       # (K, d)
    covariance: np.ndarray  # (d, d), symmetric positive-definite
    priors: np.ndarray      # (K,), positive, sums to 1
    ridge: float = 0.0
    _chol: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        priors = np.asarray(self.priors, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise InputError("means must be a (K, d) array with K >= 1")
        k, d = means.shape
        if cov.shape != (d, d):
            raise InputError(f"covariance must be ({d}, {d}), got {cov.shape}")
        if priors.shape != (k,):
            raise InputError(f"priors must have length {k}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(cov)) and np.all(np.isfinite(priors))):
            raise InputError("model parameters contain non-finite values")
        if np.abs(cov - cov.T).max() > 1e-10:
            raise InputError("covariance must be symmetric to 1e-10")
        if np.any(priors <= 0.0):
            raise InputError("priors must all be positive")
        if abs(priors.sum() - 1.0) > 1e-12:
            raise InputError("priors must sum to 1 within 1e-12")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "priors", priors)
        try:
            chol = cho_factor(cov, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"covariance is not positive-definite: {exc}") from exc
        object.__setattr__(self, "_chol", chol)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "format": GDA_FORMAT,
            "version": GDA_VERSION,
            "k": self.n_classes,
            "dim": self.dim,
            "means": self.means.tolist(),
            "covariance": self.covariance.tolist(),
            "priors": self.priors.tolist(),
            "ridge": self.ridge,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GdaModel":
        if doc.get("format") != GDA_FORMAT:
            raise InputError("not a GDA model document")
        if doc.get("version") != GDA_VERSION:
            raise InputError(f"unsupported GDA model version {doc.get('version')!r}")
        model = cls(
            means=np.array(doc["means"], dtype=np.float64),
            covariance=np.array(doc["covariance"], dtype=np.float64),
            priors=np.array(doc["priors"], dtype=np.float64),
            ridge=float(doc.get("ridge", 0.0)),
        )
        if model.n_classes != doc["k"] or model.dim != doc["dim"]:
            raise InputError("GDA model dimensions do not match its payload")
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GdaModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def fit(features, labels, ridge: float = 1e-6) -> GdaModel:
    """Moment estimation: class means, pooled within-class covariance
    (divided by N) plus ridge * I, and class-frequency priors.

    Every class index up to max(labels) must occur at least once.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] < 1:
        raise InputError("features must be a non-empty (N, d) array")
    if not np.all(np.isfinite(x)):
        raise InputError("features contain non-finite values")
    if y.shape != (x.shape[0],):
        raise InputError("labels length must match features")
    if ridge < 0:
        raise InputError("ridge must be >= 0")
    if np.any(y < 0):
        raise InputError("labels must be non-negative class indices")
    n, d = x.shape
    k = int(y.max()) + 1
    counts = np.bincount(y, minlength=k)
    if np.any(counts == 0):
        empty = np.nonzero(counts == 0)[0].tolist()
        raise InputError(f"classes with no samples: {empty}")

    means = np.zeros((k, d))
    scatter = np.zeros((d, d))
    for c in range(k):
        xc = x[y == c]
        means[c] = xc.mean(axis=0)
        centered = xc - means[c]
        scatter += centered.T @ centered
    cov = scatter / n + ridge * np.eye(d)
    cov = (cov + cov.T) / 2.0
    priors = counts / n
    return GdaModel(means=means, covariance=cov, priors=priors, ridge=float(ridge))


def _as_feature(model: GdaModel, x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (model.dim,):
        raise InputError(f"feature vector must have shape ({model.dim},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError("feature vector contains non-finite values")
    return v


def class_distances(model: GdaModel, x) -> np.ndarray:
    """Squared Mahalanobis distance to every class mean."""
    v = _as_feature(model, x)
    diffs = (v[None, :] - model.means).T  # (d, K)
    solved = cho_solve(model._chol, diffs, check_finite=False)
    return np.einsum("dk,dk->k", diffs, solved)


def gda_posterior(model: GdaModel, x) -> np.ndarray:
    """Class posterior proportional to exp(-d_c + ln pi_c), max-shifted."""
    a = -class_distances(model, x) + np.log(model.priors)
    e = np.exp(a - a.max())
    return e / e.sum()


def energy_u(model: GdaModel, x) -> float:
    """Posterior-weighted sum of d_c + ln pi_c over classes."""
    d = class_distances(model, x)
    p = gda_posterior(model, x)
    return float(((d + np.log(model.priors)) * p).sum())


def mahalanobis_score(model: GdaModel, x) -> float:
    """Negative squared distance to the nearest class mean; <= 0 always."""
    return float(-class_distances(model, x).min())
