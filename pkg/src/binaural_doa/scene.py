"""Synthetic free-field scenes: speaker images, diffuse noise and oracle labels."""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import SPEED_OF_SOUND, angular_distance, as_positions, far_field_delays
from .spatial_stats import CoherenceModel
from .stft import StftConfig, analyze, read_wav

__all__ = [
    "NOISE_ONLY",
    "SceneSpec",
    "SceneRender",
    "speech_like_source",
    "render_speaker",
    "diffuse_coherence_matrix",
    "render_diffuse_noise",
    "mix_at_snr",
    "oracle_labels",
    "render_scene",
    "export_labels",
]

logger = logging.getLogger(__name__)

NOISE_ONLY = -1


def _shaped_noise(n, sample_rate, rng, highpass=100.0):
    """Gaussian noise with a 1/f power spectrum above ``highpass`` Hz, unit variance."""
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    gain = 1.0 / np.sqrt(np.maximum(f, highpass))
    gain *= 1.0 / (1.0 + (highpass / np.maximum(f, 1e-3)) ** 4)
    x = np.fft.irfft(spec * gain, n)
    return x / np.std(x)


def speech_like_source(duration, sample_rate=16000.0, seed=None, syllable_rate=4.0):
    """Pink noise with a random syllabic (about 4 Hz) amplitude envelope.

    The envelope is low-pass noise around ``syllable_rate``, half-wave
    rectified, so the source has gaps between syllables like running speech.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    carrier = _shaped_noise(n, sample_rate, rng)
    # envelope: narrowband noise centred on the syllable rate
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    band = np.exp(-0.5 * ((f - syllable_rate) / (0.5 * syllable_rate)) ** 2)
    env = np.fft.irfft(spec * band, n)
    env = np.maximum(env / np.std(env) + 0.3, 0.0)
    x = carrier * env
    return x / np.sqrt(np.mean(x**2))


def _delay_fft(signal, delays, sample_rate):
    """Delay one signal by several (fractional) amounts via FFT phase shifts.

    Zero padding covers the largest delay so nothing wraps around.
    """
    n = signal.shape[-1]
    pad = int(np.ceil(np.max(np.abs(delays)) * sample_rate)) + 64
    nfft = n + pad
    spec = np.fft.rfft(signal, nfft)
    omega = 2 * np.pi * np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    out = np.fft.irfft(spec[None, :] * np.exp(-1j * omega[None, :] * delays[:, None]), nfft)
    return out[:, :n]


def render_speaker(source, azimuth, geometry, c=SPEED_OF_SOUND, sample_rate=16000.0):
    """Plane-wave image of a mono source at every microphone, shape (M+1, samples).

    Delays are the far-field delays shifted so the earliest microphone has
    zero delay; relative delays between microphones are exact.
    """
    source = np.asarray(source, dtype=float)
    tau = far_field_delays(geometry, azimuth, c)
    return _delay_fft(source, tau - tau.min(), sample_rate)


def _device_labels(n_ch, devices):
    if devices is not None:
        devices = np.asarray(devices)
        if devices.shape != (n_ch,):
            raise ValueError(f"need one device label per channel, got {devices.shape}")
        return devices
    # odd channel count: the last one is the external microphone
    n_head = n_ch - 1 if n_ch % 2 and n_ch > 1 else n_ch
    labels = np.zeros(n_ch, dtype=int)
    labels[n_head // 2:n_head] = 1
    labels[n_head:] = 2
    return labels


def diffuse_coherence_matrix(geometry, model: CoherenceModel, omega, devices=None, psd=False):
    """Target coherence matrices, shape (len(omega), C, C).

    Pairs across the two head devices follow the head-shadow (modified sinc)
    model at their actual distance; all other pairs follow the spherically
    isotropic sinc(omega d / c). The combination is not positive semidefinite
    at low frequencies; ``psd=True`` returns the eigenvalue-clipped matrices
    that :func:`render_diffuse_noise` actually realises.
    """
    pos = as_positions(geometry)
    n_ch = len(pos)
    devices = _device_labels(n_ch, devices)
    dist = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
    omega = np.asarray(omega, dtype=float)[:, None, None]
    interaural = ((devices[:, None] == 0) & (devices[None, :] == 1)) | (
        (devices[:, None] == 1) & (devices[None, :] == 0))
    shadowed = model.at(omega, dist[None])
    free = np.sinc(omega * dist[None] / (model.c * np.pi))
    gamma = np.where(interaural[None], shadowed, free)
    if psd:
        a = _mixing_matrices(gamma)
        gamma = a @ np.swapaxes(a, -1, -2).conj()
    return gamma


def _mixing_matrices(gamma):
    """Square-root factors of coherence matrices, clipping negative eigenvalues."""
    w, v = np.linalg.eigh(gamma)
    clipped = w < 0
    if np.any(clipped):
        logger.info("coherence model not PSD in %d frequency bins; clipping eigenvalues",
                    int(np.any(clipped, axis=-1).sum()))
    return v * np.sqrt(np.maximum(w, 0.0))[..., None, :]


@functools.lru_cache(maxsize=8)
def _cached_mixing(pos_bytes, shape, model, n, sample_rate, devices):
    # scenes of one sweep share geometry and length; the eigendecompositions dominate
    pos = np.frombuffer(pos_bytes).reshape(shape)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    mix = _mixing_matrices(diffuse_coherence_matrix(pos, model, 2 * np.pi * f, np.array(devices)))
    mix.flags.writeable = False
    return mix


def render_diffuse_noise(geometry, model: CoherenceModel, duration, seed=None,
                         sample_rate=16000.0, devices=None, shaped=True):
    """Stationary Gaussian noise whose pairwise coherence follows the diffuse model.

    Independent spectra (one per channel, over the full signal length) are
    mixed per frequency by a square root of the target coherence matrix and
    transformed back. ``shaped`` applies a speech-like 1/f spectral tilt,
    identical on all channels.
    """
    if duration < 1.0:
        raise ValueError("diffuse noise needs a duration of at least 1 s")
    pos = as_positions(geometry)
    n_ch = len(pos)
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    spec = (rng.standard_normal((n_ch, n // 2 + 1))
            + 1j * rng.standard_normal((n_ch, n // 2 + 1))) / np.sqrt(2)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    if n_ch > 1:
        labels = tuple(_device_labels(n_ch, devices).tolist())
        mix = _cached_mixing(np.ascontiguousarray(pos, float).tobytes(), pos.shape, model, n, float(sample_rate), labels)
        spec = np.einsum("fij,jf->if", mix, spec)
    if shaped:
        highpass = 100.0
        gain = 1.0 / np.sqrt(np.maximum(f, highpass))
        spec = spec * (gain / (1.0 + (highpass / np.maximum(f, 1e-3)) ** 4))
    x = np.fft.irfft(spec, n, axis=-1)
    return x / np.sqrt(np.mean(x**2))


@dataclass
class SceneRender:
    mixture: np.ndarray  # (C, samples)
    speech_only: np.ndarray  # (J, C, samples)
    noise_only: np.ndarray  # (C, samples)
    oracle_labels: np.ndarray  # (bins, frames) dominant speaker index or NOISE_ONLY
    oracle_presence: np.ndarray  # (bins, frames) True where speech outweighs noise
    azimuths: np.ndarray
    sample_rate: float


def oracle_labels(speech, noise, config: StftConfig, num_head=None):
    """Per-bin dominant speaker and speech presence from the clean components.

    Powers are averaged over the head channels. A speaker dominates a bin if
    its power exceeds the sum of all other speakers and the noise; speech is
    present if the total speech power exceeds the noise power.
    """
    speech = np.asarray(speech)
    n_ch = speech.shape[1]
    head = slice(None, num_head if num_head is not None else max(n_ch - 1, 1))
    p_speech = np.stack([
        np.mean(np.abs(analyze(s[head], config).data) ** 2, axis=0) for s in speech
    ])  # (J, bins, frames)
    p_noise = np.mean(np.abs(analyze(noise[head], config).data) ** 2, axis=0)
    total = p_speech.sum(axis=0)
    dominant = np.argmax(p_speech, axis=0)
    p_dom = np.take_along_axis(p_speech, dominant[None], axis=0)[0]
    labels = np.where(p_dom > total - p_dom + p_noise, dominant, NOISE_ONLY)
    return labels, total > p_noise


def mix_at_snr(speech, noise, snr_db, config: StftConfig | None = None, num_head=None,
               azimuths=(), sample_rate=16000.0) -> SceneRender:
    """Scale ``noise`` to the requested head-averaged broadband SNR and mix.

    ``speech`` is (J, C, samples); ``snr_db=inf`` mixes without noise.
    """
    speech = np.atleast_3d(np.asarray(speech, dtype=float))
    noise = np.asarray(noise, dtype=float)
    if speech.shape[1:] != noise.shape:
        raise ValueError(f"shape mismatch: speech {speech.shape}, noise {noise.shape}")
    n_ch = noise.shape[0]
    head = slice(None, num_head if num_head is not None else max(n_ch - 1, 1))
    p_speech = np.mean(speech.sum(axis=0)[head] ** 2)
    p_noise = np.mean(noise[head] ** 2)
    if p_speech == 0:
        raise ValueError("speech component has zero power")
    if np.isinf(snr_db) and snr_db > 0:
        noise = np.zeros_like(noise)
    else:
        if not np.isfinite(snr_db):
            raise ValueError(f"SNR must be finite or +inf, got {snr_db}")
        if p_noise == 0:
            raise ValueError("noise component has zero power")
        noise = noise * np.sqrt(p_speech / p_noise * 10 ** (-snr_db / 10))
    mixture = speech.sum(axis=0) + noise
    config = config or StftConfig(sample_rate=sample_rate)
    labels, presence = oracle_labels(speech, noise, config, num_head)
    return SceneRender(mixture, speech, noise, labels, presence, np.asarray(azimuths, float),
                       sample_rate)


@dataclass
class SceneSpec:
    """One scene: speakers as ``(azimuth_deg, source)`` where ``source`` is
    ``"speech-like"`` (generated from the seed) or a path to a mono WAV file."""

    geometry: np.ndarray
    speakers: list = field(default_factory=list)
    noise: str = "diffuse"
    snr_db: float = 0.0
    duration: float = 5.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        self.geometry = as_positions(self.geometry)
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed}")
        if self.noise not in ("diffuse", "none"):
            raise ValueError(f"unknown noise kind {self.noise!r}")
        if self.noise == "diffuse" and not np.isfinite(self.snr_db):
            raise ValueError("SNR must be finite for noisy scenes")
        az = [a for a, _ in self.speakers]
        for i in range(len(az)):
            for j in range(i + 1, len(az)):
                if angular_distance(az[i], az[j]) < 1e-9:
                    raise ValueError(f"speakers {i} and {j} are collocated at {az[i]} deg")

    @property
    def azimuths(self):
        return np.array([a for a, _ in self.speakers], dtype=float)


def render_scene(spec: SceneSpec, model: CoherenceModel, config: StftConfig,
                 num_head=None) -> SceneRender:
    """Render a :class:`SceneSpec`; identical output for identical specs."""
    fs = config.sample_rate
    n = int(round(spec.duration * fs))
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.speakers) + 1)
    images = []
    for (azimuth, source), ss in zip(spec.speakers, seeds):
        if isinstance(source, str) and source == "speech-like":
            mono = speech_like_source(spec.duration, fs, seed=ss)
        else:
            _, data = read_wav(source, expected_rate=fs)
            mono = np.resize(data[0], n)
        images.append(render_speaker(mono[:n], azimuth, spec.geometry, model.c, fs))
    speech = np.stack(images)
    if spec.noise == "diffuse":
        noise = render_diffuse_noise(spec.geometry, model, max(spec.duration, 1.0), seeds[-1], fs)
        noise = noise[:, :n]
        snr = spec.snr_db
    else:
        noise = np.zeros_like(speech[0])
        snr = np.inf
    return mix_at_snr(speech, noise, snr, config, num_head, spec.azimuths, fs)


def export_labels(path, render: SceneRender) -> None:
    """CSV with one row per (frame, bin): dominant speaker (-1 = none) and presence."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "bin", "dominant_speaker", "speech_present"])
        n_bins, n_frames = render.oracle_labels.shape
        for l in range(n_frames):
            for k in range(n_bins):
                writer.writerow([l, k, int(render.oracle_labels[k, l]),
                                 int(render.oracle_presence[k, l])])
