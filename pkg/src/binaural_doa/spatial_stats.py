"""Covariance tracking, coherence estimates and CDR-based bin selection.

Channel indices are zero-based. With the default binaural layout (M = 4) the
head-mounted channels are 0, 1 (left device) and 2, 3 (right device) and the
external microphone is channel 4.

Arrays are batched over leading axes: a covariance stack has shape
``(..., C, C)`` and a frame of STFT coefficients has shape ``(bins, C)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .stft import StftConfig

__all__ = [
    "SPEECH",
    "NOISE",
    "UndefinedCoherenceError",
    "CovarianceState",
    "CoherenceModel",
    "SubsetCriterion",
    "default_pairs",
    "smoothing_factor",
    "speech_presence",
    "update_covariance",
    "pair_coherence",
    "effective_coherence",
    "diffuse_coherence",
    "cdr",
    "cdr_db",
    "estimate_cdr",
    "select_bins",
]

logger = logging.getLogger(__name__)

# per-bin activity labels
SPEECH = True
NOISE = False

# |Gamma_y| at or above 1 - CDR_COHERENT_EPS is treated as a fully coherent field
CDR_COHERENT_EPS = 1e-9


class UndefinedCoherenceError(ValueError):
    """Coherence requested for a channel with zero power."""


def default_pairs(num_head: int = 4) -> tuple[tuple[int, int], ...]:
    """All left-right cross pairs for ``num_head`` head microphones.

    The first half of the head channels is taken as the left device.
    """
    if num_head < 2 or num_head % 2:
        raise ValueError(f"need an even number of head microphones, got {num_head}")
    half = num_head // 2
    return tuple((i, j) for i in range(half) for j in range(half, num_head))


def smoothing_factor(time_constant: float, hop_seconds: float) -> float:
    """Recursive smoothing factor exp(-hop / tau)."""
    if time_constant <= 0:
        raise ValueError("time constant must be positive")
    return float(np.exp(-hop_seconds / time_constant))


@dataclass(frozen=True)
class CoherenceModel:
    """Modified sinc model of the diffuse-field coherence between the two devices."""

    alpha: float = 0.5
    beta: float = 2.2
    r: float = 0.18
    c: float = 343.0

    def __post_init__(self):
        if self.r <= 0 or self.c <= 0:
            raise ValueError("r and c must be positive")
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError("need alpha > 0 and beta >= 0")

    def at(self, omega, distance=None):
        """Model coherence at angular frequency ``omega`` (rad/s).

        ``distance`` overrides ``r``; broadcasts against ``omega``.
        """
        d = self.r if distance is None else distance
        x = np.asarray(omega, dtype=float) * d / self.c
        # np.sinc is the normalized sinc: sin(pi t) / (pi t)
        return np.sinc(self.alpha * x / np.pi) / np.sqrt(1.0 + (self.beta * x) ** 4)


@dataclass(frozen=True)
class SubsetCriterion:
    cdr_threshold: float = 0.0  # dB, may be -inf
    mic_pairs: tuple[tuple[int, int], ...] = field(default_factory=default_pairs)

    def __post_init__(self):
        if not self.mic_pairs:
            raise ValueError("mic_pairs must not be empty")
        for i, j in self.mic_pairs:
            if i == j:
                raise ValueError(f"pair ({i}, {j}) uses the same channel twice")


@dataclass
class CovarianceState:
    phi_y: np.ndarray  # (bins, C, C)
    phi_u: np.ndarray  # (bins, C, C)
    lambda_y: float
    lambda_u: float
    frames_seen_y: np.ndarray  # (bins,)
    frames_seen_u: np.ndarray  # (bins,)

    @classmethod
    def initial(cls, num_bins, num_channels, lambda_y, lambda_u, scale=1.0):
        """State with both covariances set to ``1e-6 * scale * I``."""
        for lam in (lambda_y, lambda_u):
            if not 0.0 < lam < 1.0:
                raise ValueError(f"smoothing factor must lie in (0, 1), got {lam}")
        eye = np.broadcast_to(np.eye(num_channels, dtype=complex) * 1e-6 * scale,
                              (num_bins, num_channels, num_channels))
        return cls(
            phi_y=eye.copy(),
            phi_u=eye.copy(),
            lambda_y=lambda_y,
            lambda_u=lambda_u,
            frames_seen_y=np.zeros(num_bins, dtype=int),
            frames_seen_u=np.zeros(num_bins, dtype=int),
        )

    @property
    def num_channels(self) -> int:
        return self.phi_y.shape[-1]


def speech_presence(frame, noise_psd, threshold=0.5, head_channels=None):
    """Label each bin of one frame as speech-and-noise (True) or noise-only.

    The per-channel score is ``1 - exp(-max(|y|^2 / noise_psd - 1, 0))``; the
    label is True where its mean over the head channels exceeds ``threshold``.

    frame: (bins, C) complex; noise_psd: broadcastable to (bins, C), > 0.
    head_channels: indices to average over (default: all but the last channel).
    """
    frame = np.asarray(frame)
    noise_psd = np.asarray(noise_psd, dtype=float)
    if np.any(noise_psd <= 0):
        raise ValueError("noise_psd must be strictly positive")
    if head_channels is None:
        head_channels = slice(None, frame.shape[-1] - 1) if frame.shape[-1] > 1 else slice(None)
    posterior_snr = np.abs(frame) ** 2 / noise_psd
    score = 1.0 - np.exp(-np.maximum(posterior_snr - 1.0, 0.0))
    return score[..., head_channels].mean(axis=-1) > threshold


def update_covariance(state: CovarianceState, frame, labels) -> CovarianceState:
    """One recursive update; speech bins feed ``phi_y``, noise bins ``phi_u``.

    Updates ``state`` in place and returns it.
    """
    frame = np.asarray(frame)
    labels = np.asarray(labels, dtype=bool)
    n_bins, n_ch = state.phi_y.shape[:2]
    if frame.shape != (n_bins, n_ch):
        raise ValueError(f"frame shape {frame.shape} does not match state ({n_bins}, {n_ch})")
    if labels.shape != (n_bins,):
        raise ValueError(f"labels shape {labels.shape} does not match {n_bins} bins")
    outer = frame[:, :, None] * frame[:, None, :].conj()
    # complex products are not exactly conjugate-symmetric; force exact Hermitian form
    outer = 0.5 * (outer + np.swapaxes(outer, -1, -2).conj())
    for phi, lam, seen, mask in (
        (state.phi_y, state.lambda_y, state.frames_seen_y, labels),
        (state.phi_u, state.lambda_u, state.frames_seen_u, ~labels),
    ):
        if mask.any():
            phi[mask] = lam * phi[mask] + (1.0 - lam) * outer[mask]
            seen[mask] += 1
    return state


def _coherence(phi, i, j):
    """Pairwise coherence, NaN where a diagonal entry is not positive."""
    pii = phi[..., i, i].real
    pjj = phi[..., j, j].real
    denom = np.sqrt(np.where((pii > 0) & (pjj > 0), pii * pjj, np.nan))
    return phi[..., i, j] / denom


def pair_coherence(phi, i: int, j: int):
    """Complex coherence phi[i, j] / sqrt(phi[i, i] phi[j, j])."""
    phi = np.asarray(phi)
    gamma = _coherence(phi, i, j)
    if np.any(np.isnan(gamma)):
        raise UndefinedCoherenceError(f"zero power on channel {i} or {j}")
    return gamma if gamma.ndim else complex(gamma)


def effective_coherence(phi_y, pairs):
    """Mean pairwise coherence over ``pairs`` (NaN propagates)."""
    if not pairs:
        raise ValueError("pair set is empty")
    phi_y = np.asarray(phi_y)
    total = sum(_coherence(phi_y, i, j) for i, j in pairs)
    return total / len(pairs)


def diffuse_coherence(model: CoherenceModel, k, config: StftConfig):
    """Model coherence of the undesired field at bin ``k`` (zero-based, 0 = DC)."""
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k >= config.num_bins):
        raise IndexError(f"bin index out of range 0..{config.num_bins - 1}")
    omega = 2 * np.pi * k * config.sample_rate / config.window_len
    return model.at(omega)


def cdr(gamma_y, gamma_u):
    """Coherent-to-diffuse ratio from noisy coherence and real diffuse model.

    Returns a linear ratio >= 0; ``inf`` where ``|gamma_y| >= 1 - 1e-9``.
    Negative values from estimation noise are clamped to zero.
    """
    gamma_y = np.asarray(gamma_y, dtype=complex)
    gamma_u = np.asarray(gamma_u, dtype=float)
    if np.any(np.abs(gamma_u) >= 1):
        raise ValueError("diffuse model coherence must satisfy |gamma_u| < 1")
    re = gamma_y.real
    mag2 = re**2 + gamma_y.imag**2
    gu2 = gamma_u**2
    radicand = gu2 * re**2 - gu2 * mag2 + gu2 - 2 * gamma_u * re + mag2
    numerator = gamma_u * re - mag2 - np.sqrt(np.maximum(radicand, 0.0))
    coherent = np.abs(gamma_y) >= 1 - CDR_COHERENT_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        value = numerator / (mag2 - 1)
    value = np.where(coherent, np.inf, np.maximum(value, 0.0))
    return value if value.ndim else float(value)


def cdr_db(value):
    with np.errstate(divide="ignore"):
        return 10 * np.log10(value)


def estimate_cdr(phi_y, pairs, model: CoherenceModel, config: StftConfig, bins=None):
    """CDR per bin from the binaural effective coherence; NaN if undefined.

    ``phi_y`` is (..., bins, C, C); ``bins`` gives the STFT bin index of each
    entry along the bin axis (default: 0, 1, ...).
    """
    phi_y = np.asarray(phi_y)
    bins = np.arange(phi_y.shape[-3]) if bins is None else np.asarray(bins)
    gamma_y = effective_coherence(phi_y, pairs)
    gamma_u = diffuse_coherence(model, bins, config)
    undefined = np.isnan(gamma_y)
    out = cdr(np.where(undefined, 0.0, gamma_y), gamma_u)
    return np.where(undefined, np.nan, out)


def select_bins(state: CovarianceState, criterion: SubsetCriterion, model: CoherenceModel,
                config: StftConfig, bins=None) -> np.ndarray:
    """Indices of bins whose CDR (in dB) reaches the threshold.

    ``bins`` restricts the candidates (default: all). Bins with undefined
    coherence are excluded.
    """
    candidates = np.arange(state.phi_y.shape[0]) if bins is None else np.asarray(bins)
    if criterion.cdr_threshold == -np.inf:
        return candidates
    value = estimate_cdr(state.phi_y[candidates], criterion.mic_pairs, model, config, candidates)
    undefined = np.isnan(value)
    if undefined.any():
        logger.debug("excluding %d bins with undefined coherence", undefined.sum())
    with np.errstate(invalid="ignore"):
        keep = cdr_db(np.where(undefined, 0.0, value)) >= criterion.cdr_threshold
    return candidates[keep & ~undefined]
