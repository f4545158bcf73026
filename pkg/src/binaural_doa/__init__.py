"""Binaural multi-speaker DOA estimation with an external microphone.

Head-mounted RTF vectors are estimated per time-frequency bin (covariance
whitening or the spatial-coherence method), matched against a prototype
database with the Hermitian angle, and bins are optionally restricted to
those with a high coherent-to-diffuse ratio before the spatial spectrum is
formed.
"""

__version__ = "0.1.0"

from .doa import PrototypeDatabase, accuracy, build_prototype_db, pick_doas, spectrum
from .rtf import RtfEstimate, estimate_rtf_cw, estimate_rtf_sc
from .spatial_stats import CoherenceModel, CovarianceState, SubsetCriterion, select_bins
from .stft import StftConfig, analyze

__all__ = [
    "__version__",
    "StftConfig",
    "analyze",
    "CoherenceModel",
    "CovarianceState",
    "SubsetCriterion",
    "select_bins",
    "RtfEstimate",
    "estimate_rtf_cw",
    "estimate_rtf_sc",
    "PrototypeDatabase",
    "build_prototype_db",
    "spectrum",
    "pick_doas",
    "accuracy",
]
