"""Synthetic datasets with planted forward kernels and controlled SNR.

EEG is generated as gain-weighted convolutions of a planted kernel with
the attended and ignored envelopes plus calibrated noise, so every
estimator downstream has verifiable ground truth. Attention is modeled
purely as gain modulation of a shared kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TrialBundle, save_trial, save_truth, write_manifest
from .features import FEATURE_FS, FeatureSignal, onset_envelope
from .linear import TRF_LAGS, LagSpec, Trf
from .signals import MultiSignal, standardize

EEG_CHANNELS = ("unilateral", "bilateral")

# Planted peaks: (latency s, width s, amplitude); early positive and a
# later negative deflection, second channel scaled down.
DEFAULT_PEAKS = ((0.100, 0.040, 1.0), (0.200, 0.050, -0.7))
DEFAULT_CHANNEL_SCALES = (1.0, 0.8)


@dataclass(frozen=True)
class SynthConfig:
    participants: int = 18
    trials: int = 16
    duration: float = 150.0
    g_att: float = 1.0
    g_ign: float = 0.5
    snr_db: float = -5.0
    seed: int = 0
    peaks: tuple = DEFAULT_PEAKS
    channel_scales: tuple = DEFAULT_CHANNEL_SCALES
    pink_noise: bool = False
    fs: float = FEATURE_FS

    def __post_init__(self):
        if not self.g_att > self.g_ign >= 0:
            raise ValueError(f"need g_att > g_ign >= 0, got {self.g_att}, {self.g_ign}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


def gen_feature(duration: float, fs: float = FEATURE_FS, seed: int = 0) -> FeatureSignal:
    """Surrogate speech envelope: band-limited (< 8 Hz) positive noise.

    Built in the frequency domain (flat below 6 Hz, raised-cosine taper
    to 8 Hz, zero above), shifted positive, then standardized.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * fs))
    rng = np.random.default_rng(seed)
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    gain = np.ones_like(freqs)
    taper = (freqs > 6.0) & (freqs < 8.0)
    gain[taper] = 0.5 * (1.0 + np.cos(np.pi * (freqs[taper] - 6.0) / 2.0))
    gain[freqs >= 8.0] = 0.0
    x = np.fft.irfft(spectrum * gain, n=n)
    x = x - x.min()  # positive random process
    return standardize(FeatureSignal(x, fs, kind="envelope"))


def gen_trf(
    peaks=DEFAULT_PEAKS,
    lags: LagSpec = TRF_LAGS,
    channel_scales=DEFAULT_CHANNEL_SCALES,
    feature_kind: str = "envelope",
) -> Trf:
    """Planted kernel: Gaussian-windowed peaks on the TRF latency axis."""
    latencies = lags.latencies()
    span = (lags.lag_min / lags.fs, lags.lag_max / lags.fs)
    taps = np.zeros(lags.n_taps)
    for latency, width, amplitude in peaks:
        if not span[0] <= latency <= span[1]:
            raise ValueError(f"peak latency {latency}s outside lag span {span}")
        taps += amplitude * np.exp(-0.5 * ((latencies - latency) / width) ** 2)
    coeff = np.outer(np.asarray(channel_scales, dtype=np.float64), taps)
    channels = EEG_CHANNELS[: len(channel_scales)]
    return Trf(coeff, lags, channels, feature_kind=feature_kind, role="attended")


def _convolve_kernel(feature: np.ndarray, kernel_taps: np.ndarray, lags: LagSpec) -> np.ndarray:
    # eeg[t] = sum_j h[j] * f[t - lag_j]; realized as a full convolution
    # sliced so tap j lines up with lag_j.
    full = np.convolve(feature, kernel_taps)
    start = -lags.lag_min
    n = feature.shape[0]
    out = np.zeros(n)
    lo = max(start, 0)
    hi = min(start + n, full.shape[0])
    out[lo - start : hi - start] = full[lo:hi]
    return out


def attended_label_for_trial(trial_index: int) -> str:
    """Attention alternates between speakers every four trials."""
    return "male" if (trial_index // 4) % 2 == 0 else "female"


def _pink_filter(noise: np.ndarray, fs: float) -> np.ndarray:
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(noise.shape[0], d=1.0 / fs)
    scale = np.ones_like(freqs)
    scale[1:] = 1.0 / np.sqrt(freqs[1:])
    scale[0] = 0.0
    out = np.fft.irfft(spec * scale, n=noise.shape[0])
    return out / out.std()


def gen_trial(config: SynthConfig, trial_index: int, seed) -> TrialBundle:
    """Generate one trial: planted-kernel EEG plus feature streams."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng_streams = seed.spawn(3)
    n = int(round(config.duration * config.fs))
    env_male = gen_feature(config.duration, config.fs, seed=rng_streams[0])
    env_female = gen_feature(config.duration, config.fs, seed=rng_streams[1])
    label = attended_label_for_trial(trial_index)
    env_att, env_ign = (
        (env_male, env_female) if label == "male" else (env_female, env_male)
    )

    kernel = gen_trf(config.peaks, channel_scales=config.channel_scales)
    clean = np.zeros((kernel.coefficients.shape[0], n))
    for c in range(clean.shape[0]):
        clean[c] = config.g_att * _convolve_kernel(
            env_att.samples, kernel.coefficients[c], kernel.lags
        ) + config.g_ign * _convolve_kernel(
            env_ign.samples, kernel.coefficients[c], kernel.lags
        )

    rng = np.random.default_rng(rng_streams[2])
    noise = rng.standard_normal(clean.shape)
    if config.pink_noise:
        noise = np.stack([_pink_filter(row, config.fs) for row in noise])
    signal_power = (clean**2).mean(axis=1)
    noise_power = (noise**2).mean(axis=1)
    target_noise_power = signal_power / 10.0 ** (config.snr_db / 10.0)
    noise *= np.sqrt(target_noise_power / noise_power)[:, None]

    eeg = standardize(
        MultiSignal(kernel.channels, clean + noise, config.fs)
    )
    return TrialBundle(
        eeg=eeg,
        att_envelope=env_att,
        att_onsets=onset_envelope(env_att),
        ign_envelope=env_ign,
        ign_onsets=onset_envelope(env_ign),
        attended_label=label,
        index=trial_index,
    )


def gen_participant(config: SynthConfig, participant_index: int) -> list[TrialBundle]:
    """All trials for one participant, with derived per-trial seeds."""
    root = np.random.SeedSequence([config.seed, participant_index])
    trial_seeds = root.spawn(config.trials)
    return [
        gen_trial(config, i, trial_seeds[i]) for i in range(config.trials)
    ]


def gen_dataset(config: SynthConfig, out_dir) -> None:
    """Write a full synthetic dataset in the standard layout + truth.json."""
    kernel = gen_trf(config.peaks, channel_scales=config.channel_scales)
    participants = {}
    for p in range(config.participants):
        pid = f"p{p + 1:02d}"
        trials = gen_participant(config, p)
        for trial in trials:
            save_trial(f"{out_dir}/{pid}", trial)
        participants[pid] = [
            {"index": t.index, "attended": t.attended_label} for t in trials
        ]
    write_manifest(out_dir, config.fs, participants)
    save_truth(
        out_dir,
        {
            "kernel": kernel.coefficients,
            "kernel_lags": [kernel.lags.lag_min, kernel.lags.lag_max],
            "channels": list(kernel.channels),
            "peaks": [list(p) for p in config.peaks],
            "g_att": config.g_att,
            "g_ign": config.g_ign,
            "snr_db": config.snr_db,
            "seed": config.seed,
            "trials": config.trials,
            "duration": config.duration,
        },
    )
