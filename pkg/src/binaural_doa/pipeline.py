"""Frame-wise localization pipeline shared by the CLI and the acceptance suite.

Per frame: gate the recursive covariance updates with speech presence labels,
estimate head RTFs (CW and/or SC) in every analysed bin, keep the bins whose
CDR reaches each threshold, and pick the J peaks of the Hermitian-angle
spectrum. Everything computed for frame ``l`` depends only on frames ``<= l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .doa import PrototypeDatabase, accuracy, angle_table, pick_doas
from .rtf import estimate_rtf_cw, estimate_rtf_sc
from .spatial_stats import (
    CoherenceModel,
    CovarianceState,
    cdr_db,
    default_pairs,
    estimate_cdr,
    smoothing_factor,
    speech_presence,
    update_covariance,
)
from .stft import Spectrogram, StftConfig

__all__ = [
    "PipelineSettings",
    "FrameResults",
    "NoiseFloorTracker",
    "estimated_labels",
    "track_covariances",
    "localize",
]


@dataclass(frozen=True)
class PipelineSettings:
    tau_y: float = 0.25
    tau_u: float = 0.5
    spp_threshold: float = 0.5
    fmin: float = 100.0
    fmax: float = 8000.0
    thresholds: tuple[float, ...] = (-np.inf, 0.0)
    estimators: tuple[str, ...] = ("CW", "SC")
    mic_pairs: tuple[tuple[int, int], ...] = field(default_factory=default_pairs)
    num_head: int = 4
    tolerance: float = 5.0

    def analysis_bins(self, config: StftConfig) -> np.ndarray:
        f = config.bin_frequencies()
        return np.flatnonzero((f >= self.fmin) & (f <= self.fmax))


class NoiseFloorTracker:
    """Causal noise PSD estimate: minimum of the smoothed periodogram over a
    sliding window, scaled by a fixed bias factor."""

    def __init__(self, shape, window_frames=62, smoothing=0.8, bias=2.0, floor=1e-12):
        self.smoothing = smoothing
        self.bias = bias
        self.floor = floor
        self.history = np.full((window_frames,) + tuple(shape), np.inf)
        self.smoothed = None
        self.index = 0

    def update(self, power):
        if self.smoothed is None:
            self.smoothed = np.array(power, dtype=float)
        else:
            self.smoothed = self.smoothing * self.smoothed + (1 - self.smoothing) * power
        self.history[self.index % len(self.history)] = self.smoothed
        self.index += 1
        return np.maximum(self.bias * self.history.min(axis=0), self.floor)


def estimated_labels(spec: Spectrogram, threshold=0.5, num_head=4) -> np.ndarray:
    """Speech-presence labels (bins, frames) from the simplified SPP score."""
    tracker = NoiseFloorTracker((spec.num_bins, spec.num_channels))
    labels = np.zeros((spec.num_bins, spec.num_frames), dtype=bool)
    for l in range(spec.num_frames):
        frame = spec.frame(l)
        noise_psd = tracker.update(np.abs(frame) ** 2)
        labels[:, l] = speech_presence(frame, noise_psd, threshold, slice(None, num_head))
    return labels


def track_covariances(spec: Spectrogram, labels, settings: PipelineSettings, bins=None):
    """Run the gated recursive covariance estimate through all frames.

    Returns ``(phi_y, phi_u)`` histories of shape (frames, bins, C, C), entry
    ``l`` being the state after the update with frame ``l``.
    """
    bins = np.arange(spec.num_bins) if bins is None else np.asarray(bins)
    data = spec.data[:, bins, :]
    labels = np.asarray(labels)[bins]
    hop = spec.config.hop_seconds
    n_ch = spec.num_channels
    first = data[:, :, 0]
    scale = float(np.mean(np.abs(first) ** 2)) or 1.0
    state = CovarianceState.initial(len(bins), n_ch, smoothing_factor(settings.tau_y, hop),
                                    smoothing_factor(settings.tau_u, hop), scale)
    phi_y = np.empty((spec.num_frames, len(bins), n_ch, n_ch), dtype=complex)
    phi_u = np.empty_like(phi_y)
    for l in range(spec.num_frames):
        update_covariance(state, data[:, :, l].T, labels[:, l])
        phi_y[l] = state.phi_y
        phi_u[l] = state.phi_u
    return phi_y, phi_u


@dataclass
class FrameResults:
    """Per-frame outcome for every (estimator, threshold) variant."""

    doas: dict  # (estimator, threshold) -> (frames, J) azimuths
    acc: dict  # (estimator, threshold) -> (frames,) accuracy, NaN without truth
    contributing: dict  # (estimator, threshold) -> (frames,) bins used
    hop_seconds: float

    def mean_acc(self, key, exclude_seconds=0.0):
        series = self.acc[key]
        start = int(np.ceil(exclude_seconds / self.hop_seconds - 1e-9))
        return float(np.mean(series[start:])) if series.size > start else float("nan")


def localize(spec: Spectrogram, labels, db: PrototypeDatabase, J: int,
             settings: PipelineSettings = PipelineSettings(),
             model: CoherenceModel = CoherenceModel(), truth=None) -> FrameResults:
    """Estimate J DOAs in every frame for each configured estimator/threshold."""
    config = spec.config
    if db.num_bins != config.num_bins:
        raise ValueError("prototype database does not match the STFT bin count")
    bins = settings.analysis_bins(config)
    phi_y, phi_u = track_covariances(spec, labels, settings, bins)
    n_frames = spec.num_frames

    cdr_values = estimate_cdr(phi_y, settings.mic_pairs, model, config, bins)
    with np.errstate(invalid="ignore"):
        cdr_level = np.where(np.isnan(cdr_values), -np.inf, cdr_db(cdr_values))

    doas, acc, contributing = {}, {}, {}
    for name in settings.estimators:
        if name == "SC":
            est = estimate_rtf_sc(phi_y, num_head=settings.num_head)
        elif name == "CW":
            est = estimate_rtf_cw(phi_y, phi_u, num_head=settings.num_head)
        else:
            raise ValueError(f"unknown estimator {name!r}")
        angles = angle_table(est.g_h, db, bins)  # (frames, bins, I)
        # invalid estimates may give NaN angles; they are never selected
        angles = np.where(est.valid[..., None], angles, 0.0)
        for thr in settings.thresholds:
            selected = est.valid if thr == -np.inf else est.valid & (cdr_level >= thr)
            scores = -np.einsum("lki,lk->li", angles, selected.astype(float))
            picks = np.empty((n_frames, J))
            frame_acc = np.full(n_frames, np.nan)
            for l in range(n_frames):
                picks[l] = pick_doas(scores[l], J, db.directions).azimuths
                if truth is not None:
                    frame_acc[l] = accuracy(picks[l], truth, settings.tolerance)
            key = (name, thr)
            doas[key] = picks
            acc[key] = frame_acc
            contributing[key] = selected.sum(axis=1)
    return FrameResults(doas, acc, contributing, config.hop_seconds)
