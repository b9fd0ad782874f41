"""Uniformly-sampled signal containers and preprocessing primitives.

Containers are immutable after construction (frozen dataclasses over
read-only numpy arrays), so they are safe to share across parallel
workers. EEG preprocessing order is fixed: high-pass at the native rate,
resample to the analysis rate, then standardize.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve, resample_poly

from .errors import AlignmentError, DegenerateSignalError

# Ratio approximation bound for rational resampling.
_MAX_RATIO_DENOMINATOR = 100_000

# Relative std threshold below which a signal counts as constant.
_DEGENERATE_STD = 1e-13


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if out.base is not None or out.flags.writeable:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Signal:
    """A real-valued time series with its sampling frequency in Hz."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        object.__setattr__(self, "samples", _readonly(self.samples))
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return len(self) / self.fs


@dataclass(frozen=True)
class MultiSignal:
    """Named multichannel time series; ``data`` is channels x samples."""

    channels: tuple[str, ...]
    data: np.ndarray
    fs: float

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "data", _readonly(self.data))
        if self.data.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {self.data.shape}")
        if len(self.channels) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.channels)} channel names for {self.data.shape[0]} rows"
            )
        if len(set(self.channels)) != len(self.channels):
            raise ValueError(f"channel names not unique: {self.channels}")
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data contains NaN or Inf")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def channel(self, name: str) -> Signal:
        """Extract one channel as a Signal."""
        idx = self.channels.index(name)
        return Signal(self.data[idx], self.fs)


@dataclass(frozen=True)
class FirFilter:
    """FIR coefficients plus the design metadata they came from."""

    coefficients: np.ndarray
    cutoff_hz: float
    order: int
    fs: float
    window: str = "hamming"

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _readonly(self.coefficients))
        if self.coefficients.shape != (self.order + 1,):
            raise ValueError(
                f"coefficient count {self.coefficients.shape[0]} != order+1 = {self.order + 1}"
            )
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("coefficients contain NaN or Inf")

    def magnitude_response(self, freqs_hz: np.ndarray) -> np.ndarray:
        """|H(f)| evaluated at the given frequencies in Hz."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        n = np.arange(self.coefficients.shape[0])
        phases = np.exp(-2j * np.pi * np.outer(f / self.fs, n))
        return np.abs(phases @ self.coefficients)


def design_highpass_sinc(cutoff_hz: float, order: int, fs: float) -> FirFilter:
    """Design a Hamming-windowed spectral-inversion high-pass FIR filter.

    The high-pass is formed as (windowed sinc delta) - (windowed sinc
    low-pass at ``cutoff_hz``); for odd orders the delta is the windowed
    fractional-delay interpolator, which keeps the coefficient sequence
    symmetric. The low-pass part is rescaled so the DC gain is exactly
    zero. The -6 dB point sits at ``cutoff_hz``.
    """
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, fs/2) for fs={fs}")
    m = np.arange(order + 1) - order / 2.0
    w = np.hamming(order + 1)
    delta = w * np.sinc(m)
    ratio = 2.0 * cutoff_hz / fs
    lowpass = w * ratio * np.sinc(ratio * m)
    coeff = delta - (delta.sum() / lowpass.sum()) * lowpass
    return FirFilter(coeff, cutoff_hz=cutoff_hz, order=order, fs=fs)


def _apply_fir_1d(h: np.ndarray, x: np.ndarray, delay: int) -> np.ndarray:
    full = fftconvolve(x, h, mode="full")
    return full[delay : delay + x.shape[0]]


def apply_fir(filt: FirFilter, signal, compensate_delay: bool = True):
    """Filter a Signal or MultiSignal (per channel) by linear convolution.

    Edges are zero padded and the output has the input's length. With
    ``compensate_delay`` the output is advanced by the filter's group
    delay (order/2 samples, exact for even-order linear-phase designs)
    so it stays time-aligned with the input.
    """
    h = filt.coefficients
    delay = int(round(filt.order / 2.0)) if compensate_delay else 0
    if isinstance(signal, MultiSignal):
        if signal.n_samples <= h.shape[0]:
            raise ValueError(
                f"signal length {signal.n_samples} must exceed filter length {h.shape[0]}"
            )
        rows = [_apply_fir_1d(h, row, delay) for row in signal.data]
        return MultiSignal(signal.channels, np.stack(rows), signal.fs)
    if len(signal) <= h.shape[0]:
        raise ValueError(
            f"signal length {len(signal)} must exceed filter length {h.shape[0]}"
        )
    return Signal(_apply_fir_1d(h, signal.samples, delay), signal.fs)


def _resample_ratio(fs: float, target_fs: float) -> Fraction:
    exact = Fraction(target_fs) / Fraction(fs)
    ratio = exact.limit_denominator(_MAX_RATIO_DENOMINATOR)
    if abs(ratio - exact) > Fraction(1, 10**9) * exact:
        raise ValueError(
            f"resampling ratio {target_fs}/{fs} has no rational approximation "
            f"with denominator <= {_MAX_RATIO_DENOMINATOR}"
        )
    return ratio


def _resample_1d(x: np.ndarray, up: int, down: int, n_out: int) -> np.ndarray:
    y = resample_poly(x, up, down)
    if y.shape[0] < n_out:
        y = np.concatenate([y, np.zeros(n_out - y.shape[0])])
    return y[:n_out]


def resample(signal, target_fs: float):
    """Polyphase rational resampling to ``target_fs``.

    Anti-alias low-pass at min(fs, target_fs)/2; output length is
    round(input_length * target_fs / fs).
    """
    if not target_fs > 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    if target_fs == signal.fs:
        return signal
    ratio = _resample_ratio(signal.fs, target_fs)
    up, down = ratio.numerator, ratio.denominator
    if isinstance(signal, MultiSignal):
        n_out = int(round(signal.n_samples * up / down))
        rows = [_resample_1d(row, up, down, n_out) for row in signal.data]
        return MultiSignal(signal.channels, np.stack(rows), target_fs)
    n_out = int(round(len(signal) * up / down))
    return Signal(_resample_1d(signal.samples, up, down, n_out), target_fs)


def _standardize_1d(x: np.ndarray) -> np.ndarray:
    mean = x.mean()
    std = x.std()  # population std, fixed for determinism
    if std <= _DEGENERATE_STD * max(1.0, abs(mean)):
        raise DegenerateSignalError("signal is constant; cannot standardize")
    return (x - mean) / std


def standardize(signal):
    """Remove the mean and scale to unit population std (per channel)."""
    if isinstance(signal, MultiSignal):
        return MultiSignal(
            signal.channels,
            np.stack([_standardize_1d(row) for row in signal.data]),
            signal.fs,
        )
    out = _standardize_1d(signal.samples)
    if type(signal) is Signal:
        return Signal(out, signal.fs)
    return replace(signal, samples=out)


def xcorr_align(recorded: Signal, reference: Signal, max_lag: int) -> int:
    """Lag (in samples) of ``recorded`` relative to ``reference``.

    Returns the lag in [-max_lag, max_lag] maximizing the normalized
    cross-correlation between recorded[t] and reference[t - lag] over
    their overlap. Positive lag means the recorded signal is delayed.
    """
    if recorded.fs != reference.fs:
        raise ValueError(f"sampling rates differ: {recorded.fs} vs {reference.fs}")
    if max_lag >= min(len(recorded), len(reference)):
        raise ValueError("max_lag must be smaller than both signal lengths")
    x = recorded.samples
    y = reference.samples
    best_lag, best_score = None, -np.inf
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            xo, yo = x[lag:], y[: y.shape[0] - lag]
        else:
            xo, yo = x[: x.shape[0] + lag], y[-lag:]
        n = min(xo.shape[0], yo.shape[0])
        if n < 2:
            continue
        xo, yo = xo[:n] - xo[:n].mean(), yo[:n] - yo[:n].mean()
        denom = np.sqrt((xo @ xo) * (yo @ yo))
        if denom == 0:
            continue
        score = (xo @ yo) / denom
        if score > best_score:
            best_lag, best_score = lag, score
    if best_lag is None:
        raise AlignmentError("no lag with a usable overlap")
    return best_lag
