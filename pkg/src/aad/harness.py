"""Nested cross-validation, trial segmentation, attention markers and
the statistical machinery around them.

The outer loop holds out one trial per fold; the remaining data is
split into five equal contiguous folds of pooled time for tuning.
Backward-model tuning shares per-trial Gram statistics across folds and
solves the whole regularization grid from a single eigendecomposition
per inner split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .errors import TuningError
from .linear import (
    BACKWARD_LAGS,
    BackwardModel,
    GramSolver,
    LagSpec,
    _advance_matrix,
    reconstruct,
    safe_pearson,
)


@dataclass(frozen=True)
class NestedCvPlan:
    """Outer hold-out per trial with ``inner`` contiguous tuning folds."""

    n_trials: int
    inner: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_trials < 2:
            raise ValueError(f"need at least 2 trials, got {self.n_trials}")
        if self.inner < 2:
            raise ValueError(f"need at least 2 inner folds, got {self.inner}")

    @property
    def outer(self) -> tuple[int, ...]:
        return tuple(range(self.n_trials))


def make_nested_cv(n_trials: int = 16, inner: int = 5, seed: int = 0) -> NestedCvPlan:
    """Deterministic plan: every trial is the outer test exactly once."""
    return NestedCvPlan(n_trials=n_trials, inner=inner, seed=seed)


def inner_spans(total_rows: int, inner: int) -> list[tuple[int, int]]:
    """Contiguous row spans partitioning ``total_rows`` into equal folds.

    Fold sizes differ by at most one row.
    """
    bounds = np.linspace(0, total_rows, inner + 1).round().astype(int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(inner)]


def span_chunks(span: tuple[int, int], lengths: list[int]) -> list[tuple[int, int, int]]:
    """Map a row span over concatenated records to per-record pieces.

    Returns (record index, local start, local end) triples.
    """
    out = []
    offset = 0
    for i, n in enumerate(lengths):
        lo = max(span[0], offset)
        hi = min(span[1], offset + n)
        if lo < hi:
            out.append((i, lo - offset, hi - offset))
        offset += n
    return out


def lambda_grid() -> np.ndarray:
    """19 ridge penalties log-spaced from 1e-9 to 1e9."""
    return np.logspace(-9, 9, 19)


def tune_backward(
    plan: NestedCvPlan,
    trials,
    feature_kind: str = "envelope",
    role: str = "attended",
    lags: LagSpec = BACKWARD_LAGS,
    grid: np.ndarray | None = None,
) -> list[BackwardModel]:
    """One tuned backward model per outer fold.

    For each outer fold the 19-model grid is fitted on each inner
    split, the penalty maximizing the mean inner-fold validation
    correlation is chosen, and the model is refitted on all training
    data at that penalty. Degenerate validation correlations score 0; a
    grid with no usable score at all raises TuningError.
    """
    if plan.n_trials != len(trials):
        raise ValueError(f"plan covers {plan.n_trials} trials, got {len(trials)}")
    if grid is None:
        grid = lambda_grid()
    grid = np.asarray(grid, dtype=np.float64)

    lagged = [_advance_matrix(t.eeg, lags) for t in trials]
    targets = [t.feature(role, feature_kind).samples for t in trials]
    full_gram = [X.T @ X for X in lagged]
    full_cross = [X.T @ y for X, y in zip(lagged, targets)]
    lengths = [X.shape[0] for X in lagged]

    def chunk_stats(t, lo, hi):
        if lo == 0 and hi == lengths[t]:
            return full_gram[t], full_cross[t]
        Xs = lagged[t][lo:hi]
        return Xs.T @ Xs, Xs.T @ targets[t][lo:hi]

    models = []
    for held_out in plan.outer:
        train_idx = [i for i in range(len(trials)) if i != held_out]
        train_lengths = [lengths[i] for i in train_idx]
        spans = inner_spans(sum(train_lengths), plan.inner)
        fold_chunks = [
            [(train_idx[j], lo, hi) for j, lo, hi in span_chunks(s, train_lengths)]
            for s in spans
        ]
        fold_gram, fold_cross, fold_rows = [], [], []
        for chunks in fold_chunks:
            g = np.zeros_like(full_gram[0])
            b = np.zeros_like(full_cross[0])
            r = 0
            for t, lo, hi in chunks:
                gc, bc = chunk_stats(t, lo, hi)
                g += gc
                b += bc
                r += hi - lo
            fold_gram.append(g)
            fold_cross.append(b)
            fold_rows.append(r)
        total_gram = sum(fold_gram)
        total_cross = sum(fold_cross)
        total_rows = sum(fold_rows)

        scores = np.full((plan.inner, grid.shape[0]), np.nan)
        for i, chunks in enumerate(fold_chunks):
            solver = GramSolver(total_gram - fold_gram[i])
            rows_i = total_rows - fold_rows[i]
            vb = solver.eigenvectors.T @ (total_cross - fold_cross[i])
            weights = solver.eigenvectors @ (
                vb[:, None] / (solver.eigenvalues[:, None] + grid[None, :] * rows_i)
            )
            preds = [lagged[t][lo:hi] @ weights for t, lo, hi in chunks]
            y_val = np.concatenate([targets[t][lo:hi] for t, lo, hi in chunks])
            p_val = np.concatenate(preds, axis=0)
            yc = y_val - y_val.mean()
            sy = np.sqrt(yc @ yc)
            if sy <= 1e-13:
                continue
            pc = p_val - p_val.mean(axis=0)
            sp = np.sqrt((pc**2).sum(axis=0))
            ok = sp > 1e-13
            scores[i, ok] = (pc[:, ok].T @ yc) / (sp[ok] * sy)
        if np.isnan(scores).all():
            raise TuningError("all inner validation correlations are degenerate")
        mean_scores = np.where(np.isnan(scores), 0.0, scores).mean(axis=0)
        best_lam = float(grid[int(np.argmax(mean_scores))])

        w = GramSolver(total_gram).solve(total_cross, best_lam * total_rows)
        models.append(
            BackwardModel(
                w.reshape(trials[0].eeg.n_channels, lags.n_taps),
                lags,
                trials[0].eeg.channels,
                lam=best_lam,
                feature_kind=feature_kind,
                role=role,
            )
        )
    return models


@dataclass(frozen=True)
class Segment:
    """One temporal segment of a trial, in samples and seconds."""

    start: int
    length: int
    start_s: float
    length_s: float

    @property
    def stop(self) -> int:
        return self.start + self.length

    def slice(self) -> slice:
        return slice(self.start, self.stop)


def segment_indices(n_samples: int, fs: float, length_s: float, hop_s: float = 1.0) -> list[Segment]:
    """Segments at starts 0, hop, 2*hop, ... lying fully inside the record."""
    if length_s <= 0 or hop_s <= 0:
        raise ValueError("segment length and hop must be positive")
    length = max(int(round(length_s * fs)), 2)
    hop = max(int(round(hop_s * fs)), 1)
    out = []
    start = 0
    while start + length <= n_samples:
        out.append(Segment(start, length, start / fs, length_s))
        start += hop
    return out


def segment_trial(trial, length_s: float, hop_s: float = 1.0) -> list[Segment]:
    """Segment one trial; an over-long segment length gives an empty list."""
    return segment_indices(trial.n_samples, trial.fs, length_s, hop_s)


@dataclass(frozen=True)
class AttentionMarker:
    """Reconstruction correlations against both streams for one segment."""

    rho_attended: float
    rho_ignored: float
    delta: float
    start_s: float
    length_s: float

    @property
    def correct(self) -> bool:
        return self.delta > 0


def _make_marker(recon, att, ign, segment: Segment) -> AttentionMarker:
    sl = segment.slice()
    rho_a = safe_pearson(recon[sl], att[sl])
    rho_i = safe_pearson(recon[sl], ign[sl])
    return AttentionMarker(rho_a, rho_i, rho_a - rho_i, segment.start_s, segment.length_s)


def markers_backward(model: BackwardModel, trial, segments) -> list[AttentionMarker]:
    """Per-segment (rho_att, rho_ign, delta) from one trial's reconstruction.

    The decision rule downstream is delta > 0; degenerate segments give
    zero correlations rather than errors.
    """
    recon = reconstruct(model, trial.eeg).samples
    att = trial.feature("attended", model.feature_kind).samples
    ign = trial.feature("ignored", model.feature_kind).samples
    return [_make_marker(recon, att, ign, seg) for seg in segments]


def markers_from_reconstruction(recon: np.ndarray, trial, feature_kind: str, segments) -> list[AttentionMarker]:
    """Markers for a precomputed reconstruction (e.g. from the CNN)."""
    att = trial.feature("attended", feature_kind).samples
    ign = trial.feature("ignored", feature_kind).samples
    return [_make_marker(recon, att, ign, seg) for seg in segments]


def null_markers(model_or_recon, trial, segments, seed: int = 0, feature_kind: str | None = None) -> list[AttentionMarker]:
    """Null markers: each reconstruction meets a different segment's features.

    The mismatch partner is drawn uniformly from the other segments, so
    the null shares the reconstruction statistics of the true markers
    but carries no attention information.
    """
    if len(segments) < 2:
        raise ValueError("need at least 2 segments for null markers")
    if isinstance(model_or_recon, BackwardModel):
        recon = reconstruct(model_or_recon, trial.eeg).samples
        feature_kind = model_or_recon.feature_kind
    else:
        recon = np.asarray(model_or_recon, dtype=np.float64)
        if feature_kind is None:
            raise ValueError("feature_kind required with a raw reconstruction")
    att = trial.feature("attended", feature_kind).samples
    ign = trial.feature("ignored", feature_kind).samples
    rng = np.random.default_rng(seed)
    out = []
    for i, seg in enumerate(segments):
        j = int(rng.integers(0, len(segments) - 1))
        if j >= i:
            j += 1
        partner = segments[j]
        rho_a = safe_pearson(recon[seg.slice()], att[partner.slice()])
        rho_i = safe_pearson(recon[seg.slice()], ign[partner.slice()])
        out.append(
            AttentionMarker(rho_a, rho_i, rho_a - rho_i, seg.start_s, seg.length_s)
        )
    return out


def ttest(kind: str, tail: str, a, b) -> tuple[float, float]:
    """t statistic and p value for unpaired (pooled) or paired tests.

    Single-tailed p tests mean(a) > mean(b) (upper tail).
    """
    from .errors import DegenerateTestError

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kind == "unpaired":
        na, nb = a.shape[0], b.shape[0]
        if na < 2 or nb < 2:
            raise ValueError("need at least 2 samples per group")
        va, vb = a.var(ddof=1), b.var(ddof=1)
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        if pooled <= 0:
            raise DegenerateTestError("zero variance in both groups")
        t = (a.mean() - b.mean()) / np.sqrt(pooled * (1.0 / na + 1.0 / nb))
    elif kind == "paired":
        if a.shape != b.shape:
            raise ValueError("paired test needs equal-length samples")
        if a.shape[0] < 2:
            raise ValueError("need at least 2 pairs")
        d = a - b
        sd = d.std(ddof=1)
        if sd <= 0:
            raise DegenerateTestError("zero variance of paired differences")
        df = a.shape[0] - 1
        t = d.mean() / (sd / np.sqrt(a.shape[0]))
    else:
        raise ValueError(f"kind must be 'unpaired' or 'paired', got {kind!r}")
    if tail == "single":
        p = float(sstats.t.sf(t, df))
    elif tail == "double":
        p = float(2.0 * sstats.t.sf(abs(t), df))
    else:
        raise ValueError(f"tail must be 'single' or 'double', got {tail!r}")
    return float(t), p


def chance_level(n_segments: int, alpha: float = 0.05) -> float:
    """Upper chance bound: smallest k/n with Binom(n, 1/2) CDF >= 1-alpha."""
    if n_segments < 1:
        raise ValueError(f"need at least 1 segment, got {n_segments}")
    k = int(sstats.binom.ppf(1.0 - alpha, n_segments, 0.5))
    while sstats.binom.cdf(k, n_segments, 0.5) < 1.0 - alpha:
        k += 1
    return k / n_segments
