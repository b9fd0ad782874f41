"""Lagged design matrices, ridge regression, forward TRFs and backward
stimulus-reconstruction models.

Ridge penalties given to :func:`fit_trf` / :func:`fit_backward` are on
the autocovariance scale (the Gram matrix divided by the row count), so
a penalty keeps the same meaning across recordings of different length;
:func:`ridge_solve` itself regularizes the raw Gram matrix exactly as
written in its contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCorrelationError, SingularMatrixError
from .features import FeatureSignal
from .signals import MultiSignal, Signal, _readonly

FEATURE_FS = 64.0


@dataclass(frozen=True)
class LagSpec:
    """Half-open lag window [lag_min, lag_max) in samples at ``fs``."""

    lag_min: int
    lag_max: int
    fs: float

    def __post_init__(self):
        if self.lag_min >= self.lag_max:
            raise ValueError(f"lag_min {self.lag_min} must be < lag_max {self.lag_max}")

    @property
    def n_taps(self) -> int:
        return self.lag_max - self.lag_min

    def lags(self) -> np.ndarray:
        return np.arange(self.lag_min, self.lag_max)

    def latencies(self) -> np.ndarray:
        """Lag values in seconds."""
        return self.lags() / self.fs


# Standard analysis configuration: forward TRFs span -1 s .. +1.5 s
# (160 taps at 64 Hz); backward models use EEG delayed 0 .. 1 s (64 taps).
TRF_LAGS = LagSpec(-64, 96, FEATURE_FS)
BACKWARD_LAGS = LagSpec(0, 64, FEATURE_FS)


def _as_channel_matrix(signals) -> np.ndarray:
    if isinstance(signals, MultiSignal):
        return signals.data
    if isinstance(signals, Signal):
        return signals.samples[None, :]
    arr = np.asarray(signals, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def _shifted_columns(data: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """X[t, c*K + j] = data[c, t - shifts[j]], zero outside the record."""
    n_ch, n = data.shape
    k = shifts.shape[0]
    out = np.zeros((n, n_ch * k))
    for c in range(n_ch):
        for j, s in enumerate(shifts):
            col = out[:, c * k + j]
            if s >= 0:
                col[s:] = data[c, : n - s]
            else:
                col[: n + s] = data[c, -s:]
    return out


def build_lag_matrix(signals, lags: LagSpec) -> np.ndarray:
    """Time-lagged design matrix, T x (channels * taps).

    Row t holds each channel's value at t - lag for every lag in
    [lag_min, lag_max); out-of-range samples are zero-filled. Columns
    are channel-major with lags ascending within a channel.
    """
    data = _as_channel_matrix(signals)
    if lags.n_taps >= data.shape[1]:
        raise ValueError(
            f"{lags.n_taps} taps need more than {data.shape[1]} samples"
        )
    return _shifted_columns(data, lags.lags())


def _advance_matrix(signals, lags: LagSpec) -> np.ndarray:
    """Design matrix with X[t, c*K + j] = data[c, t + lag_j].

    Used by backward models and the CCA EEG side, where non-negative
    lags mean the EEG is delayed relative to the stimulus.
    """
    data = _as_channel_matrix(signals)
    if lags.n_taps >= data.shape[1]:
        raise ValueError(
            f"{lags.n_taps} taps need more than {data.shape[1]} samples"
        )
    return _shifted_columns(data, -lags.lags())


def mean_eigen_lambda(X: np.ndarray) -> float:
    """Mean eigenvalue of the biased autocovariance X'X / T."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise ValueError("empty design matrix")
    return float((X**2).sum() / (X.shape[0] * X.shape[1]))


class GramSolver:
    """Ridge solves (G + lam*I) W = B for many lam sharing one eigh(G)."""

    def __init__(self, gram: np.ndarray):
        e, v = np.linalg.eigh(gram)
        self.eigenvalues = np.maximum(e, 0.0)
        self.eigenvectors = v

    def solve(self, b: np.ndarray, lam: float) -> np.ndarray:
        e = self.eigenvalues
        if lam == 0.0 and e.min() <= e.max() * 1e-12:
            raise SingularMatrixError(
                "rank-deficient system with zero regularization"
            )
        vb = self.eigenvectors.T @ b
        scale = e + lam
        if b.ndim == 1:
            return self.eigenvectors @ (vb / scale)
        return self.eigenvectors @ (vb / scale[:, None])


@dataclass(frozen=True)
class RidgeSolution:
    """Ridge weights with the penalty they were computed at."""

    weights: np.ndarray
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights contain NaN or Inf")


def ridge_solve(X: np.ndarray, y: np.ndarray, lam: float) -> RidgeSolution:
    """w = (X'X + lam*I)^-1 X'y via eigendecomposition of X'X."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    w = GramSolver(X.T @ X).solve(X.T @ y, lam)
    return RidgeSolution(w, lam)


@dataclass(frozen=True)
class Trf:
    """Forward model: per-channel FIR coefficients over a latency axis."""

    coefficients: np.ndarray  # channels x taps
    lags: LagSpec
    channels: tuple[str, ...]
    feature_kind: str
    role: str  # attended | ignored | difference | null

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _readonly(self.coefficients))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.coefficients.shape != (len(self.channels), self.lags.n_taps):
            raise ValueError(
                f"coefficients shape {self.coefficients.shape} does not match "
                f"{len(self.channels)} channels x {self.lags.n_taps} taps"
            )

    def latencies(self) -> np.ndarray:
        return self.lags.latencies()


@dataclass(frozen=True)
class BackwardModel:
    """Stimulus-reconstruction filter over lagged multichannel EEG."""

    weights: np.ndarray  # channels x taps, tap j = EEG delay lag_j
    lags: LagSpec
    channels: tuple[str, ...]
    lam: float
    feature_kind: str
    role: str = "attended"

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.weights.shape != (len(self.channels), self.lags.n_taps):
            raise ValueError(
                f"weights shape {self.weights.shape} does not match "
                f"{len(self.channels)} channels x {self.lags.n_taps} taps"
            )


def fit_trf(feature, eeg: MultiSignal, lags: LagSpec = TRF_LAGS, role: str = "attended") -> Trf:
    """Fit one forward TRF per EEG channel by ridge regression.

    The penalty is the mean eigenvalue of the feature lag matrix's
    autocovariance, following the forward-model regularization rule.
    """
    X = build_lag_matrix(feature, lags)
    Y = eeg.data.T
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"feature has {X.shape[0]} samples, EEG has {Y.shape[0]}")
    lam = mean_eigen_lambda(X)
    W = GramSolver(X.T @ X).solve(X.T @ Y, lam * X.shape[0])
    kind = feature.kind if isinstance(feature, FeatureSignal) else "envelope"
    return Trf(W.T, lags, eeg.channels, feature_kind=kind, role=role)


def fit_backward(
    eeg: MultiSignal,
    feature,
    lags: LagSpec = BACKWARD_LAGS,
    lam: float = 1.0,
    role: str = "attended",
) -> BackwardModel:
    """Fit a backward model predicting the feature from delayed EEG.

    Lags must be non-negative: tap j uses eeg[t + lag_j], i.e. EEG
    samples delayed by up to the lag span relative to the stimulus.
    """
    if lags.lag_min < 0:
        raise ValueError(f"backward lags must be non-negative, got {lags.lag_min}")
    X = _advance_matrix(eeg, lags)
    y = feature.samples if isinstance(feature, Signal) else np.asarray(feature, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"EEG has {X.shape[0]} samples, feature has {y.shape[0]}")
    w = GramSolver(X.T @ X).solve(X.T @ y, lam * X.shape[0])
    kind = feature.kind if isinstance(feature, FeatureSignal) else "envelope"
    return BackwardModel(
        w.reshape(eeg.n_channels, lags.n_taps),
        lags,
        eeg.channels,
        lam=lam,
        feature_kind=kind,
        role=role,
    )


def reconstruct(model: BackwardModel, eeg: MultiSignal) -> FeatureSignal:
    """Apply a backward model; output has the EEG's length."""
    if eeg.channels != model.channels:
        raise ValueError(
            f"EEG channels {eeg.channels} do not match model channels {model.channels}"
        )
    X = _advance_matrix(eeg, model.lags)
    y = X @ model.weights.ravel()
    return FeatureSignal(y, eeg.fs, kind=model.feature_kind)


def pearson(a, b) -> float:
    """Sample Pearson correlation coefficient of two equal-length vectors."""
    x = a.samples if isinstance(a, Signal) else np.asarray(a, dtype=np.float64)
    y = b.samples if isinstance(b, Signal) else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(xc @ xc)
    sy = np.sqrt(yc @ yc)
    if sx <= 1e-13 * max(1.0, abs(x.mean())) or sy <= 1e-13 * max(1.0, abs(y.mean())):
        raise DegenerateCorrelationError("correlation of a constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def safe_pearson(a, b) -> float:
    """Pearson correlation with the degenerate-segment policy (0.0)."""
    try:
        return pearson(a, b)
    except DegenerateCorrelationError:
        return 0.0


def save_backward_model(path, model: BackwardModel):
    from .io import save_payload

    header = {
        "kind": "backward_model",
        "channels": list(model.channels),
        "lags": [model.lags.lag_min, model.lags.lag_max],
        "fs": model.lags.fs,
        "lambda": model.lam,
        "feature_kind": model.feature_kind,
        "role": model.role,
    }
    return save_payload(path, header, {"weights": model.weights})


def load_backward_model(path) -> BackwardModel:
    from .io import load_payload

    header, arrays = load_payload(path)
    lags = LagSpec(header["lags"][0], header["lags"][1], header["fs"])
    return BackwardModel(
        arrays["weights"],
        lags,
        tuple(header["channels"]),
        lam=header["lambda"],
        feature_kind=header["feature_kind"],
        role=header["role"],
    )


def save_trf(path, trf: Trf):
    from .io import save_payload

    header = {
        "kind": "trf",
        "channels": list(trf.channels),
        "lags": [trf.lags.lag_min, trf.lags.lag_max],
        "fs": trf.lags.fs,
        "feature_kind": trf.feature_kind,
        "role": trf.role,
    }
    return save_payload(path, header, {"coefficients": trf.coefficients})


def load_trf(path) -> Trf:
    from .io import load_payload

    header, arrays = load_payload(path)
    lags = LagSpec(header["lags"][0], header["lags"][1], header["fs"])
    return Trf(
        arrays["coefficients"],
        lags,
        tuple(header["channels"]),
        feature_kind=header["feature_kind"],
        role=header["role"],
    )
