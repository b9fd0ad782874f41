"""Auditory attention decoding from two-channel ear-EEG recordings.

Subpackages cover the full pipeline: signal containers and
preprocessing (:mod:`aad.signals`), speech features
(:mod:`aad.features`), linear forward/backward models
(:mod:`aad.linear`), TRF statistics (:mod:`aad.trf`), a numpy CNN
decoder (:mod:`aad.cnn`), CCA+LDA decoding (:mod:`aad.cca`), the
evaluation harness (:mod:`aad.harness`, :mod:`aad.experiment`) and a
synthetic oracle (:mod:`aad.synth`).
"""

from .features import FeatureSignal, auditory_envelope, erb_centers, onset_envelope
from .linear import (
    BACKWARD_LAGS,
    TRF_LAGS,
    BackwardModel,
    LagSpec,
    RidgeSolution,
    Trf,
    build_lag_matrix,
    fit_backward,
    fit_trf,
    mean_eigen_lambda,
    pearson,
    reconstruct,
    ridge_solve,
)
from .signals import (
    FirFilter,
    MultiSignal,
    Signal,
    apply_fir,
    design_highpass_sinc,
    resample,
    standardize,
    xcorr_align,
)

__version__ = "0.1.0"

__all__ = [
    "BACKWARD_LAGS",
    "BackwardModel",
    "FeatureSignal",
    "FirFilter",
    "LagSpec",
    "MultiSignal",
    "RidgeSolution",
    "Signal",
    "TRF_LAGS",
    "Trf",
    "apply_fir",
    "auditory_envelope",
    "build_lag_matrix",
    "design_highpass_sinc",
    "erb_centers",
    "fit_backward",
    "fit_trf",
    "mean_eigen_lambda",
    "onset_envelope",
    "pearson",
    "reconstruct",
    "resample",
    "ridge_solve",
    "standardize",
    "xcorr_align",
    "__version__",
]
