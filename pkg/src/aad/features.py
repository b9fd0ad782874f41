"""Auditory-inspired speech features: temporal envelope and its onsets.

The envelope comes from a 28-band gammatone filterbank (ERB-spaced
centers, 50 Hz to 5 kHz), half-wave rectification per band, averaging,
resampling to 64 Hz and standardization. The onset envelope is the
half-wave rectified first derivative of the (pre-standardization)
temporal envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .signals import MultiSignal, Signal, _readonly, resample, standardize

FEATURE_FS = 64.0
FEATURE_KINDS = ("envelope", "onset_envelope")


@dataclass(frozen=True)
class FeatureSignal(Signal):
    """A Signal tagged with the speech-feature kind it represents."""

    kind: str = "envelope"

    def __post_init__(self):
        super().__post_init__()
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")


def erb_number(freq_hz):
    """Glasberg-Moore ERB-number scale: 21.4*log10(1 + 0.00437 f)."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(freq_hz, dtype=np.float64))


def erb_bandwidth(freq_hz):
    """Glasberg-Moore equivalent rectangular bandwidth in Hz."""
    return 24.7 * (1.0 + 0.00437 * np.asarray(freq_hz, dtype=np.float64))


def erb_centers(n: int = 28, fmin: float = 50.0, fmax: float = 5000.0) -> np.ndarray:
    """Center frequencies equally spaced on the ERB-number scale."""
    if n < 2:
        raise ValueError(f"need at least 2 centers, got {n}")
    if not 0 < fmin < fmax:
        raise ValueError(f"need 0 < fmin < fmax, got {fmin}, {fmax}")
    numbers = np.linspace(erb_number(fmin), erb_number(fmax), n)
    centers = (10.0 ** (numbers / 21.4) - 1.0) / 0.00437
    centers[0], centers[-1] = fmin, fmax  # pin endpoints against roundoff
    return centers


@dataclass(frozen=True)
class GammatoneBank:
    """A 4th-order gammatone filterbank at a fixed sampling rate."""

    center_frequencies: np.ndarray
    fs: float
    order: int = 4

    def __post_init__(self):
        object.__setattr__(
            self, "center_frequencies", _readonly(self.center_frequencies)
        )
        fc = self.center_frequencies
        if fc.ndim != 1 or fc.shape[0] < 1:
            raise ValueError("center_frequencies must be a non-empty 1-D array")
        if np.any(np.diff(fc) <= 0):
            raise ValueError("center frequencies must be strictly increasing")
        if fc[-1] >= self.fs / 2:
            raise ValueError("highest center frequency exceeds Nyquist")

    @property
    def n_bands(self) -> int:
        return self.center_frequencies.shape[0]


def make_gammatone_bank(fs: float, n: int = 28, fmin: float = 50.0, fmax: float = 5000.0) -> GammatoneBank:
    return GammatoneBank(erb_centers(n, fmin, fmax), fs=fs)


def _band_pole(fc: float, fs: float, order: int) -> complex:
    # One-pole-cascade gammatone approximation: the cascade bandwidth
    # factor maps the audiological ERB onto the per-stage pole radius.
    a_gamma = (
        math.pi
        * math.factorial(2 * order - 2)
        * 2.0 ** (-(2 * order - 2))
        / math.factorial(order - 1) ** 2
    )
    b = float(erb_bandwidth(fc)) / a_gamma
    lam = math.exp(-2.0 * math.pi * b / fs)
    beta = 2.0 * math.pi * fc / fs
    return lam * complex(math.cos(beta), math.sin(beta))


def gammatone_subbands(audio: Signal, bank: GammatoneBank) -> MultiSignal:
    """Split audio into gammatone sub-bands with unit gain at each center.

    Each band is a cascade of ``bank.order`` identical one-pole complex
    resonators; the real part of the cascade output is the sub-band
    signal, scaled so a unit tone at the center frequency passes at
    (approximately) unit amplitude.
    """
    if audio.fs != bank.fs:
        raise ValueError(f"audio fs {audio.fs} != bank fs {bank.fs}")
    out = np.empty((bank.n_bands, len(audio)))
    names = []
    for i, fc in enumerate(bank.center_frequencies):
        pole = _band_pole(fc, audio.fs, bank.order)
        omega = 2.0 * math.pi * fc / audio.fs
        stage_gain = 1.0 / abs(1.0 - pole * complex(math.cos(omega), -math.sin(omega)))
        y = audio.samples.astype(np.complex128)
        for _ in range(bank.order):
            y = lfilter([1.0], [1.0, -pole], y)
        out[i] = 2.0 * y.real / stage_gain**bank.order
        names.append(f"band{i:02d}_{fc:.0f}Hz")
    return MultiSignal(names, out, audio.fs)


def auditory_envelope(
    audio: Signal,
    bank: GammatoneBank | None = None,
    target_fs: float = FEATURE_FS,
    standardized: bool = True,
) -> FeatureSignal:
    """Temporal envelope: rectified gammatone sub-bands, averaged, at 64 Hz.

    The pre-standardization envelope is non-negative (small negative
    ringing from the resampler is clipped). Pass ``standardized=False``
    to get the raw envelope.
    """
    if bank is None:
        bank = make_gammatone_bank(audio.fs)
    bands = gammatone_subbands(audio, bank)
    rectified = np.maximum(bands.data, 0.0)
    env = Signal(rectified.mean(axis=0), audio.fs)
    env = resample(env, target_fs)
    env = FeatureSignal(np.maximum(env.samples, 0.0), env.fs, kind="envelope")
    return standardize(env) if standardized else env


def onset_envelope(envelope: FeatureSignal, standardized: bool = True) -> FeatureSignal:
    """Half-wave rectified first derivative of the temporal envelope.

    The forward difference is scaled by fs and clipped at zero; the last
    sample repeats the final difference so the output keeps the input
    length. Standardization is applied independently of the envelope's.
    """
    if envelope.kind != "envelope":
        raise ValueError(f"expected an envelope, got kind {envelope.kind!r}")
    x = envelope.samples
    if x.shape[0] < 2:
        raise ValueError("envelope too short for a derivative")
    onsets = np.maximum(np.diff(x) * envelope.fs, 0.0)
    onsets = np.concatenate([onsets, onsets[-1:]])
    out = FeatureSignal(onsets, envelope.fs, kind="onset_envelope")
    return standardize(out) if standardized else out
