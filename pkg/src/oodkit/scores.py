"""Post-hoc OOD scores over a trained model.

Every score uses only penultimate features and/or the K ID-class logits;
the fake-outlier logit never participates. Higher always means more
ID-like (sign conventions are normalized internally).

The default is activation-clipped energy ("react"): penultimate features
are clipped elementwise at a percentile threshold fitted on ID training
activations before the head's ID rows are re-applied.

Extension point: a score that also consults the fake-outlier logit could
be added as another SCORE_NAMES entry with its own params; none is
implemented here, and the exclusion of that logit from the existing suite
is tested directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractViolation, DomainError, NumericalError
from .model import OodClassifier

SCORE_NAMES = ("msp", "maxlogit", "energy", "react", "mahalanobis", "knn")

COV_REG = 1e-6
INV_QUALITY_TOL = 1e-6


@dataclass
class ScoreParams:
    react_p: float = 0.9
    knn_k: int = 5
    energy_temperature: float = 1.0


@dataclass
class IdStats:
    """Statistics fitted on ID training features, shared by the score suite."""

    clip_threshold: float
    class_means: np.ndarray      # [K, F]
    covariance: np.ndarray       # [F, F], regularized
    precision: np.ndarray        # [F, F], inverse of covariance
    feature_bank: np.ndarray     # [N, F], l2-normalized rows


def penultimate_features(model: OodClassifier, inputs: np.ndarray) -> np.ndarray:
    """Inference-mode encoder features (pure function of params and input)."""
    model.eval()
    features, _, _ = model.forward(inputs)
    return features.data


def fit_id_stats(model: OodClassifier, id_train: Dataset, p: float = 0.9) -> IdStats:
    """Clip threshold (pooled p-quantile of activations, linear interpolation),
    class means, shared within-class covariance (+1e-6 I), and the normalized
    feature bank."""
    if len(id_train) == 0:
        raise DomainError("cannot fit ID statistics on an empty set")
    if not 0.0 < p < 1.0:
        raise DomainError(f"percentile must lie in (0, 1), got {p}")
    feats = penultimate_features(model, id_train.inputs())
    labels = id_train.labels()
    k = id_train.n_classes

    c = float(np.quantile(feats.ravel(), p))

    f_dim = feats.shape[1]
    means = np.empty((k, f_dim))
    scatter = np.zeros((f_dim, f_dim))
    for cls in range(1, k + 1):
        rows = feats[labels == cls]
        if rows.shape[0] == 0:
            raise DomainError(f"ID training set has no samples of class {cls}")
        means[cls - 1] = rows.mean(axis=0)
        centered = rows - means[cls - 1]
        scatter += centered.T @ centered
    cov = scatter / feats.shape[0] + COV_REG * np.eye(f_dim)
    precision = np.linalg.inv(cov)
    if np.max(np.abs(cov @ precision - np.eye(f_dim))) >= INV_QUALITY_TOL:
        raise NumericalError("covariance inverse failed the quality check; "
                             "features may be degenerate")

    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    bank = feats / np.where(norms > 0, norms, 1.0)
    return IdStats(c, means, cov, precision, bank)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return np.squeeze(m, -1) + np.log(np.exp(x - m).sum(axis=-1))


def id_logits_from_features(model: OodClassifier, features: np.ndarray,
                            clip: float = np.inf) -> np.ndarray:
    """Apply the head's K ID-class rows to (optionally clipped) features."""
    k = model.dims.n_classes
    clipped = np.minimum(features, clip)
    return clipped @ model.params["head.w"].data[:, :k] + model.params["head.b"].data[:k]


def score_energy(logits_id: np.ndarray, temperature: float = 1.0) -> float:
    """T * logsumexp(logits / T) over the K ID logits only."""
    if temperature <= 0:
        raise DomainError(f"energy temperature must be > 0, got {temperature}")
    x = np.atleast_1d(np.asarray(logits_id, dtype=np.float64))
    return float(temperature * _logsumexp_rows(x / temperature))


def score_msp(logits_id: np.ndarray) -> float:
    x = np.atleast_1d(np.asarray(logits_id, dtype=np.float64))
    return float(np.exp(x.max() - _logsumexp_rows(x)))


def score_maxlogit(logits_id: np.ndarray) -> float:
    return float(np.max(logits_id))


def score_react(model: OodClassifier, x: np.ndarray, stats: IdStats | None,
                temperature: float = 1.0) -> float:
    """Energy over ID logits recomputed from clip-rectified features."""
    if stats is None:
        raise ContractViolation("react scoring requires fitted ID statistics")
    feats = penultimate_features(model, np.atleast_2d(x))
    logits = id_logits_from_features(model, feats, clip=stats.clip_threshold)
    return score_energy(logits[0], temperature)


def score_mahalanobis(feature: np.ndarray, stats: IdStats | None) -> float:
    """Negative squared Mahalanobis distance to the nearest class mean."""
    if stats is None:
        raise ContractViolation("mahalanobis scoring requires fitted ID statistics")
    diff = stats.class_means - np.asarray(feature)
    d2 = np.einsum("kf,fg,kg->k", diff, stats.precision, diff)
    return float(-d2.min())


def score_knn(feature: np.ndarray, stats: IdStats | None, k: int) -> float:
    """Negative distance to the k-th nearest normalized bank feature."""
    if stats is None:
        raise ContractViolation("knn scoring requires fitted ID statistics")
    if not 1 <= k <= stats.feature_bank.shape[0]:
        raise DomainError(f"k={k} outside [1, {stats.feature_bank.shape[0]}]")
    q = np.asarray(feature, dtype=np.float64)
    norm = np.linalg.norm(q)
    q = q / norm if norm > 0 else q
    dists = np.linalg.norm(stats.feature_bank - q, axis=1)
    return float(-np.partition(dists, k - 1)[k - 1])


def compute_scores(model: OodClassifier, inputs: np.ndarray, score: str,
                   stats: IdStats | None = None,
                   params: ScoreParams | None = None) -> np.ndarray:
    """Vectorized scoring of a [N, D] batch; same math as the per-sample ops.

    The energy and react paths share one code path (react with an infinite
    clip is bitwise-identical to energy).
    """
    if score not in SCORE_NAMES:
        raise DomainError(f"unknown score {score!r}; choose from {SCORE_NAMES}")
    params = params or ScoreParams()
    feats = penultimate_features(model, inputs)
    t = params.energy_temperature

    if score in ("energy", "react"):
        clip = np.inf if score == "energy" else None
        if score == "react":
            if stats is None:
                raise ContractViolation("react scoring requires fitted ID statistics")
            clip = stats.clip_threshold
        logits = id_logits_from_features(model, feats, clip=clip)
        return t * _logsumexp_rows(logits / t)
    if score == "msp":
        logits = id_logits_from_features(model, feats)
        return np.exp(logits.max(axis=-1) - _logsumexp_rows(logits))
    if score == "maxlogit":
        return id_logits_from_features(model, feats).max(axis=-1)
    if score == "mahalanobis":
        return np.array([score_mahalanobis(f, stats) for f in feats])
    return np.array([score_knn(f, stats, params.knn_k) for f in feats])
