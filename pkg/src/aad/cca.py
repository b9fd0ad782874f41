"""Canonical correlation analysis between lagged EEG and lagged speech
features, and the LDA classifier over correlation-difference vectors.

Both sides are whitened via shrinkage-regularized covariances and the
canonical pairs come from an SVD of the whitened cross-covariance. The
EEG side uses the backward-model lag window (EEG delayed 0..1 s), the
feature side a short 0..250 ms window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClassifierError, SingularMatrixError
from .linear import FEATURE_FS, LagSpec, _advance_matrix, build_lag_matrix, safe_pearson
from .signals import _readonly

CCA_EEG_LAGS = LagSpec(0, 64, FEATURE_FS)
CCA_FEATURE_LAGS = LagSpec(0, 16, FEATURE_FS)

_RANK_TOL = 1e-12


def _shrunk_covariance(X: np.ndarray, shrinkage: float) -> np.ndarray:
    cov = X.T @ X / X.shape[0]
    if shrinkage == 0.0:
        return cov
    d = cov.shape[0]
    return (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / d) * np.eye(d)


def _inverse_sqrt(cov: np.ndarray, shrinkage: float) -> np.ndarray:
    e, v = np.linalg.eigh(cov)
    if e.min() <= e.max() * _RANK_TOL:
        if shrinkage == 0.0:
            raise SingularMatrixError(
                "rank-deficient covariance with zero shrinkage"
            )
        e = np.maximum(e, e.max() * _RANK_TOL)
    return v @ ((1.0 / np.sqrt(e))[:, None] * v.T)


@dataclass(frozen=True)
class CcaModel:
    """Paired projections with their training canonical correlations."""

    eeg_projection: np.ndarray  # eeg-lag dims x n_comp
    feature_projection: np.ndarray  # feature-lag dims x n_comp
    correlations: np.ndarray  # non-increasing, in [0, 1]
    eeg_mean: np.ndarray
    feature_mean: np.ndarray
    eeg_lags: LagSpec = CCA_EEG_LAGS
    feature_lags: LagSpec = CCA_FEATURE_LAGS
    shrinkage: float = 0.0

    def __post_init__(self):
        for name in ("eeg_projection", "feature_projection", "correlations",
                     "eeg_mean", "feature_mean"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.eeg_projection.shape[1] != self.feature_projection.shape[1]:
            raise ValueError("projection component counts differ")
        if np.any(np.diff(self.correlations) > 1e-9):
            raise ValueError("canonical correlations must be non-increasing")

    @property
    def n_components(self) -> int:
        return self.eeg_projection.shape[1]


def fit_cca(
    eeg_lagged: np.ndarray,
    feature_lagged: np.ndarray,
    shrinkage: float = 0.0,
    n_components: int | None = None,
    eeg_lags: LagSpec = CCA_EEG_LAGS,
    feature_lags: LagSpec = CCA_FEATURE_LAGS,
) -> CcaModel:
    """CCA via whitening and SVD of the whitened cross-covariance.

    Each side's covariance is shrunk as (1-g)*C + g*(tr(C)/d)*I before
    whitening. Components come back ordered by decreasing correlation;
    projected training components have unit variance and distinct pairs
    are mutually uncorrelated.
    """
    X = np.asarray(eeg_lagged, dtype=np.float64)
    Y = np.asarray(feature_lagged, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if shrinkage < 0:
        raise ValueError(f"shrinkage must be >= 0, got {shrinkage}")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    wx = _inverse_sqrt(_shrunk_covariance(Xc, shrinkage), shrinkage)
    wy = _inverse_sqrt(_shrunk_covariance(Yc, shrinkage), shrinkage)
    k = Xc.shape[0]
    cross = wx @ (Xc.T @ Yc / k) @ wy
    u, s, vt = np.linalg.svd(cross, full_matrices=False)
    n_comp = min(X.shape[1], Y.shape[1])
    if n_components is not None:
        n_comp = min(n_comp, n_components)
    return CcaModel(
        eeg_projection=wx @ u[:, :n_comp],
        feature_projection=wy @ vt[:n_comp].T,
        correlations=np.clip(s[:n_comp], 0.0, 1.0),
        eeg_mean=x_mean,
        feature_mean=y_mean,
        eeg_lags=eeg_lags,
        feature_lags=feature_lags,
        shrinkage=shrinkage,
    )


def correlation_vector_rows(
    model: CcaModel, eeg_rows: np.ndarray, feature_rows: np.ndarray
) -> np.ndarray:
    """Per-component correlations from pre-lagged segment rows."""
    px = (eeg_rows - model.eeg_mean) @ model.eeg_projection
    py = (feature_rows - model.feature_mean) @ model.feature_projection
    return np.array(
        [safe_pearson(px[:, i], py[:, i]) for i in range(model.n_components)]
    )


def correlation_vector(model: CcaModel, eeg_segment, feature_segment) -> np.ndarray:
    """Per-component correlations for one EEG/feature segment pair.

    Degenerate (constant) projected components contribute 0 entries so
    that decoding never aborts on short segments.
    """
    eeg_rows = _advance_matrix(eeg_segment, model.eeg_lags)
    feature_rows = build_lag_matrix(feature_segment, model.feature_lags)
    if eeg_rows.shape[0] != feature_rows.shape[0]:
        raise ValueError("EEG and feature segments have different lengths")
    return correlation_vector_rows(model, eeg_rows, feature_rows)


@dataclass(frozen=True)
class LdaClassifier:
    """Linear discriminant over correlation-difference vectors."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("classifier parameters must be finite")

    def score(self, x: np.ndarray) -> float:
        return float(self.weights @ np.asarray(x, dtype=np.float64) + self.bias)


def fit_lda(positive: np.ndarray, negative: np.ndarray) -> LdaClassifier:
    """LDA with a small shrinkage floor on the pooled covariance.

    w = S^-1 (mu+ - mu-), with the boundary placed at the class-mean
    midpoint.
    """
    pos = np.atleast_2d(np.asarray(positive, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(negative, dtype=np.float64))
    if pos.shape[0] < 2 or neg.shape[0] < 2:
        raise ValueError("need at least 2 samples per class")
    if pos.shape[1] != neg.shape[1]:
        raise ValueError("class dimensionalities differ")
    mu_pos = pos.mean(axis=0)
    mu_neg = neg.mean(axis=0)
    if np.allclose(mu_pos, mu_neg, atol=1e-12, rtol=0.0):
        raise DegenerateClassifierError("identical class means")
    d = pos.shape[1]
    scatter = (pos - mu_pos).T @ (pos - mu_pos) + (neg - mu_neg).T @ (neg - mu_neg)
    pooled = scatter / (pos.shape[0] + neg.shape[0] - 2)
    pooled = pooled + (1e-3 * np.trace(pooled) / d + 1e-12) * np.eye(d)
    w = np.linalg.solve(pooled, mu_pos - mu_neg)
    bias = -0.5 * float(w @ (mu_pos + mu_neg))
    return LdaClassifier(w, bias)


def decode_cca(
    model: CcaModel,
    lda: LdaClassifier,
    eeg_segment,
    feature_a,
    feature_b,
) -> tuple[str, float]:
    """Classify which candidate stream is attended for one segment.

    Returns ('A' or 'B', margin); margin = w.d + b with d the
    correlation-difference vector of A minus B. Ties go to A.
    """
    vec_a = correlation_vector(model, eeg_segment, feature_a)
    vec_b = correlation_vector(model, eeg_segment, feature_b)
    margin = lda.score(vec_a - vec_b)
    return ("A" if margin >= 0 else "B"), margin


def save_cca_model(path, model: CcaModel, lda: LdaClassifier | None = None):
    from .io import save_payload

    header = {
        "kind": "cca_model",
        "eeg_lags": [model.eeg_lags.lag_min, model.eeg_lags.lag_max],
        "feature_lags": [model.feature_lags.lag_min, model.feature_lags.lag_max],
        "fs": model.eeg_lags.fs,
        "shrinkage": model.shrinkage,
        "has_lda": lda is not None,
    }
    arrays = {
        "eeg_projection": model.eeg_projection,
        "feature_projection": model.feature_projection,
        "correlations": model.correlations,
        "eeg_mean": model.eeg_mean,
        "feature_mean": model.feature_mean,
    }
    if lda is not None:
        arrays["lda_weights"] = lda.weights
        arrays["lda_bias"] = np.array([lda.bias])
    return save_payload(path, header, arrays)


def load_cca_model(path):
    from .io import load_payload

    header, arrays = load_payload(path)
    fs = header["fs"]
    model = CcaModel(
        eeg_projection=arrays["eeg_projection"],
        feature_projection=arrays["feature_projection"],
        correlations=arrays["correlations"],
        eeg_mean=arrays["eeg_mean"],
        feature_mean=arrays["feature_mean"],
        eeg_lags=LagSpec(header["eeg_lags"][0], header["eeg_lags"][1], fs),
        feature_lags=LagSpec(header["feature_lags"][0], header["feature_lags"][1], fs),
        shrinkage=header["shrinkage"],
    )
    lda = None
    if header.get("has_lda"):
        lda = LdaClassifier(arrays["lda_weights"], float(arrays["lda_bias"][0]))
    return model, lda
