"""Cross-validated TRF averaging, null TRFs and the cluster test.

Per-trial Gram statistics are computed once and combined per fold, so
leave-one-trial-out fits cost one small eigendecomposition each. Null
TRFs reuse each fold's Gram matrix (a circular feature shift leaves the
feature autocovariance unchanged up to edge effects) and get their
cross-covariances from FFT circular correlations, which makes the
500-shift protocol tractable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linear import TRF_LAGS, GramSolver, LagSpec, Trf, build_lag_matrix


def _trial_stats(trials, feature_kind: str, role: str, lags: LagSpec):
    """Per-trial (Gram, cross, squared-sum, rows) for the feature lag matrix."""
    grams, crosses, sqsums, rows = [], [], [], []
    for trial in trials:
        feat = trial.feature(role, feature_kind)
        X = build_lag_matrix(feat, lags)
        Y = trial.eeg.data.T
        grams.append(X.T @ X)
        crosses.append(X.T @ Y)
        sqsums.append(float((X**2).sum()))
        rows.append(X.shape[0])
    return grams, crosses, sqsums, rows


def _fold_trf(grams, crosses, sqsums, rows, hold_out: int, lags, channels, feature_kind, role):
    idx = [i for i in range(len(grams)) if i != hold_out]
    G = sum(grams[i] for i in idx)
    B = sum(crosses[i] for i in idx)
    # raw-scale penalty = mean autocovariance eigenvalue * row count
    lam_raw = sum(sqsums[i] for i in idx) / G.shape[0]
    W = GramSolver(G).solve(B, lam_raw)
    return Trf(W.T, lags, channels, feature_kind=feature_kind, role=role)


def crossval_trf(
    trials,
    feature_kind: str = "envelope",
    role: str = "attended",
    lags: LagSpec = TRF_LAGS,
    return_folds: bool = False,
):
    """Leave-one-trial-out TRF: the mean of the per-fold fits.

    Each fold fits on the remaining trials' pooled statistics with the
    mean-autocovariance-eigenvalue penalty of its own feature lag
    matrix. With ``return_folds`` the per-fold TRFs come back too.
    """
    if len(trials) < 2:
        raise ValueError(f"need at least 2 trials, got {len(trials)}")
    channels = trials[0].eeg.channels
    grams, crosses, sqsums, rows = _trial_stats(trials, feature_kind, role, lags)
    folds = [
        _fold_trf(grams, crosses, sqsums, rows, h, lags, channels, feature_kind, role)
        for h in range(len(trials))
    ]
    mean = Trf(
        np.mean([f.coefficients for f in folds], axis=0),
        lags,
        channels,
        feature_kind=feature_kind,
        role=role,
    )
    return (mean, folds) if return_folds else mean


def difference_trf(attended: Trf, ignored: Trf) -> Trf:
    """Attended minus ignored, elementwise."""
    if attended.lags != ignored.lags or attended.channels != ignored.channels:
        raise ValueError("TRF axes do not match")
    if attended.feature_kind != ignored.feature_kind:
        raise ValueError("TRF feature kinds do not match")
    return Trf(
        attended.coefficients - ignored.coefficients,
        attended.lags,
        attended.channels,
        feature_kind=attended.feature_kind,
        role="difference",
    )


def _circular_cross(feature: np.ndarray, eeg: np.ndarray) -> np.ndarray:
    """c[k] = sum_t eeg[c, t] * feature[(t - k) mod T], per channel."""
    spec_f = np.fft.rfft(feature)
    spec_y = np.fft.rfft(eeg, axis=1)
    return np.fft.irfft(spec_y * spec_f.conj()[None, :], n=feature.shape[0], axis=1)


def null_trfs(
    trials,
    feature_kind: str = "envelope",
    n_shifts: int = 500,
    min_shift: float = 5.0,
    role: str = "attended",
    seed: int = 0,
    lags: LagSpec = TRF_LAGS,
) -> list[Trf]:
    """Null TRFs from temporally misaligned feature/EEG pairs.

    The cross-validation fit is repeated with the feature circularly
    shifted by ``n_shifts`` distinct random offsets at least
    ``min_shift`` seconds away from zero (in both directions), giving
    one null TRF per shift per held-out trial. Cross-covariances for
    shifted features are circular-correlation lookups; each fold shares
    its unshifted Gram matrix and penalty.
    """
    if n_shifts < 1:
        raise ValueError(f"n_shifts must be >= 1, got {n_shifts}")
    if len(trials) < 2:
        raise ValueError(f"need at least 2 trials, got {len(trials)}")
    fs = trials[0].fs
    span = lags.n_taps / fs
    if min_shift <= span:
        raise ValueError(
            f"min_shift {min_shift}s must exceed the TRF span {span}s"
        )
    n_min = min(t.n_samples for t in trials)
    shift_min = int(round(min_shift * fs))
    lo, hi = shift_min, n_min - shift_min
    if hi - lo < n_shifts:
        raise ValueError(
            f"shift range [{lo}, {hi}) too small for {n_shifts} distinct shifts"
        )
    rng = np.random.default_rng(seed)
    shifts = rng.choice(np.arange(lo, hi), size=n_shifts, replace=False)

    channels = trials[0].eeg.channels
    grams, _, sqsums, _ = _trial_stats(trials, feature_kind, role, lags)
    crosses = [
        _circular_cross(t.feature(role, feature_kind).samples, t.eeg.data)
        for t in trials
    ]
    lag_values = lags.lags()

    out = []
    for hold_out in range(len(trials)):
        idx = [i for i in range(len(trials)) if i != hold_out]
        G = sum(grams[i] for i in idx)
        lam_raw = sum(sqsums[i] for i in idx) / G.shape[0]
        solver = GramSolver(G)
        for s in shifts:
            B = np.zeros((lags.n_taps, len(channels)))
            for i in idx:
                n_t = crosses[i].shape[1]
                taps = (lag_values + int(s)) % n_t
                B += crosses[i][:, taps].T
            W = solver.solve(B, lam_raw)
            out.append(
                Trf(W.T, lags, channels, feature_kind=feature_kind, role="null")
            )
    return out


@dataclass(frozen=True)
class Cluster:
    """A maximal supra-threshold run in one channel of the average TRF."""

    channel: str
    start_tap: int
    end_tap: int  # exclusive
    start_latency: float
    end_latency: float
    size: int
    mass: float
    p_value: float


@dataclass(frozen=True)
class ClusterResult:
    clusters: tuple[Cluster, ...]
    threshold: float
    n_permutations: int
    max_cluster_size: int
    p_value: float  # p of the largest cluster; 1.0 when there is none

    def significant(self, alpha: float = 0.05) -> tuple[Cluster, ...]:
        return tuple(c for c in self.clusters if c.p_value < alpha)


def _runs(mask: np.ndarray):
    """(start, end) index pairs of maximal True runs in a 1-D bool array."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return list(zip(starts, ends))


def _max_runs(mask: np.ndarray) -> np.ndarray:
    """Longest True run along the last axis, for each leading index."""
    k = mask.shape[-1]
    idx = np.arange(k)
    last_false = np.maximum.accumulate(np.where(~mask, idx, -1), axis=-1)
    runs = np.where(mask, idx - last_false, 0)
    return runs.max(axis=-1)


def cluster_permutation_test(
    participant_trfs,
    null_trfs,
    n_perm: int = 1000,
    threshold_pct: float = 99.0,
    seed: int = 0,
) -> ClusterResult:
    """Single-sample cluster test of the averaged TRF's instantaneous power.

    The supra-threshold level is the ``threshold_pct`` percentile of the
    null TRFs' squared coefficients. Clusters are maximal supra-threshold
    runs per channel of the participant-averaged TRF's power; the test
    statistic is the largest cluster's size, referenced against random
    per-participant sign flips applied before averaging.
    """
    if len(participant_trfs) < 2:
        raise ValueError("need at least 2 participant TRFs")
    if not null_trfs:
        raise ValueError("null TRF set is empty")
    ref = participant_trfs[0]
    stack = np.stack([t.coefficients for t in participant_trfs])
    null_power = np.concatenate(
        [np.ravel(t.coefficients**2) for t in null_trfs]
    )
    threshold = float(np.percentile(null_power, threshold_pct))

    avg = stack.mean(axis=0)
    power = avg**2
    supra = power > threshold

    n_part, n_ch, n_taps = stack.shape
    rng = np.random.default_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(n_perm, n_part))
    perm_avg = (signs @ stack.reshape(n_part, -1)) / n_part
    perm_supra = (perm_avg**2).reshape(n_perm, n_ch, n_taps) > threshold
    perm_max = _max_runs(perm_supra).max(axis=-1)

    latencies = ref.latencies()
    step = 1.0 / ref.lags.fs
    clusters = []
    for c, name in enumerate(ref.channels):
        for start, end in _runs(supra[c]):
            size = int(end - start)
            clusters.append(
                Cluster(
                    channel=name,
                    start_tap=int(start),
                    end_tap=int(end),
                    start_latency=float(latencies[start]),
                    end_latency=float(latencies[end - 1] + step),
                    size=size,
                    mass=float(power[c, start:end].sum()),
                    p_value=float(np.mean(perm_max >= size)),
                )
            )
    clusters.sort(key=lambda cl: (-cl.size, cl.channel, cl.start_tap))
    obs_max = clusters[0].size if clusters else 0
    p_value = clusters[0].p_value if clusters else 1.0
    return ClusterResult(
        clusters=tuple(clusters),
        threshold=threshold,
        n_permutations=n_perm,
        max_cluster_size=obs_max,
        p_value=p_value,
    )


def bonferroni(p_values, m: int, alpha: float = 0.05) -> np.ndarray:
    """Significance decisions at the Bonferroni-corrected level alpha/m."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return np.asarray(p_values, dtype=np.float64) < alpha / m


@dataclass
class TrfSet:
    """A collection of TRFs sharing a lag axis, e.g. one per participant."""

    trfs: list

    def __post_init__(self):
        if self.trfs:
            ref = self.trfs[0]
            for t in self.trfs:
                if t.lags != ref.lags or t.channels != ref.channels:
                    raise ValueError("TrfSet members must share axes and channels")

    def select(self, role: str | None = None, feature_kind: str | None = None) -> "TrfSet":
        out = [
            t
            for t in self.trfs
            if (role is None or t.role == role)
            and (feature_kind is None or t.feature_kind == feature_kind)
        ]
        return TrfSet(out)

    def grand_average(self) -> Trf:
        if not self.trfs:
            raise ValueError("cannot average an empty TrfSet")
        ref = self.trfs[0]
        return Trf(
            np.mean([t.coefficients for t in self.trfs], axis=0),
            ref.lags,
            ref.channels,
            feature_kind=ref.feature_kind,
            role=ref.role,
        )


def export_trf_csv(path, trf: Trf):
    """TRF curve as CSV: latency_s plus one column per channel."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("latency_s," + ",".join(trf.channels) + "\n")
        for j, latency in enumerate(trf.latencies()):
            row = ",".join(f"{trf.coefficients[c, j]:.10g}" for c in range(len(trf.channels)))
            fh.write(f"{latency:.10g},{row}\n")
    return path


def export_cluster_json(path, result: ClusterResult):
    """ClusterResult as JSON with latencies in milliseconds."""
    payload = {
        "threshold": result.threshold,
        "n_permutations": result.n_permutations,
        "max_cluster_size": result.max_cluster_size,
        "p_value": result.p_value,
        "clusters": [
            {
                "channel": c.channel,
                "start_ms": c.start_latency * 1000.0,
                "end_ms": c.end_latency * 1000.0,
                "size": c.size,
                "mass": c.mass,
                "p_value": c.p_value,
            }
            for c in result.clusters
        ],
    }
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
