"""Multichannel short-time Fourier analysis and WAV I/O.

Shape convention: spectrograms are stored as ``(channels, bins, frames)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = [
    "StftConfig",
    "Spectrogram",
    "analysis_window",
    "analyze",
    "read_wav",
    "write_wav",
]

WINDOW_KINDS = ("sqrt-hann",)


@dataclass(frozen=True)
class StftConfig:
    sample_rate: float = 16000.0
    window_len: int = 512
    hop: int = 256
    window_kind: str = "sqrt-hann"

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.window_len <= 0 or self.window_len % 2:
            raise ValueError(f"window_len must be positive and even, got {self.window_len}")
        if self.hop != self.window_len // 2:
            raise ValueError("only 50% overlap is supported (hop = window_len / 2)")
        if self.window_kind not in WINDOW_KINDS:
            raise ValueError(f"unsupported window kind {self.window_kind!r}")

    @classmethod
    def from_duration(cls, sample_rate=16000.0, window_ms=32.0, **kwargs):
        """Config for a window length given in milliseconds, 50% overlap."""
        window_len = int(round(sample_rate * window_ms / 1000.0))
        window_len += window_len % 2
        return cls(sample_rate=sample_rate, window_len=window_len, hop=window_len // 2, **kwargs)

    @property
    def num_bins(self) -> int:
        return self.window_len // 2 + 1

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    def bin_frequencies(self) -> np.ndarray:
        """Center frequency of each one-sided bin in Hz."""
        return np.arange(self.num_bins) * self.sample_rate / self.window_len

    def angular_frequencies(self) -> np.ndarray:
        return 2 * np.pi * self.bin_frequencies()

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len:
            return 0
        return (num_samples - self.window_len) // self.hop + 1


def analysis_window(config: StftConfig) -> np.ndarray:
    # periodic Hann, so that w[n]^2 + w[n + hop]^2 = 1 holds exactly
    n = np.arange(config.window_len)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / config.window_len)
    return np.sqrt(hann)


@dataclass
class Spectrogram:
    data: np.ndarray  # (channels, bins, frames), complex
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"expected (channels, bins, frames), got shape {self.data.shape}")
        if self.data.shape[1] != self.config.num_bins:
            raise ValueError(
                f"bin count {self.data.shape[1]} does not match window ({self.config.num_bins})"
            )

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_frames(self) -> int:
        return self.data.shape[2]

    def frame(self, index: int) -> np.ndarray:
        """All channels of one frame, shape (bins, channels)."""
        return self.data[:, :, index].T


def analyze(signal, config: StftConfig) -> Spectrogram:
    """One-sided STFT of a multichannel signal.

    ``signal`` has shape ``(channels, samples)`` (a 1-D array is treated as a
    single channel, or pass a list of equal-length channels). Frames start at
    sample 0 with no padding; the FFT length equals the window length.
    """
    if isinstance(signal, (list, tuple)):
        lengths = {len(ch) for ch in signal}
        if len(lengths) > 1:
            raise ValueError(f"channel length mismatch: {sorted(lengths)}")
    x = np.atleast_2d(np.asarray(signal, dtype=float))
    if x.ndim != 2:
        raise ValueError(f"expected (channels, samples), got shape {x.shape}")
    n_ch, n_samples = x.shape
    if n_samples < config.window_len:
        raise ValueError(
            f"signal has {n_samples} samples, shorter than one window ({config.window_len})"
        )
    n_frames = config.num_frames(n_samples)
    # (channels, frames, window_len) strided view
    frames = np.lib.stride_tricks.sliding_window_view(x, config.window_len, axis=-1)
    frames = frames[:, :: config.hop][:, :n_frames]
    spec = np.fft.rfft(frames * analysis_window(config), axis=-1)
    return Spectrogram(np.ascontiguousarray(spec.transpose(0, 2, 1)), config)


def read_wav(paths, expected_rate: float | None = None) -> tuple[float, np.ndarray]:
    """Read one multichannel WAV, or a list of files stacked as channels.

    Integer PCM is scaled to [-1, 1). Returns ``(sample_rate, (channels, samples))``.
    No resampling: a rate different from ``expected_rate`` raises ``ValueError``.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    channels = []
    rate = None
    for path in paths:
        fs, data = wavfile.read(path)
        if rate is not None and fs != rate:
            raise ValueError(f"{path}: sample rate {fs} differs from {rate}")
        rate = fs
        data = _to_float(data)
        channels.extend(np.atleast_2d(data.T) if data.ndim == 2 else [data])
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"sample rate {rate} Hz does not match configured {expected_rate} Hz")
    lengths = {len(ch) for ch in channels}
    if len(lengths) > 1:
        raise ValueError(f"channel length mismatch across files: {sorted(lengths)}")
    return float(rate), np.vstack(channels)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype.kind == "f":
        return data.astype(float)
    if data.dtype == np.int16:
        return data / 32768.0
    if data.dtype == np.int32:
        # 24-bit PCM is returned by scipy left-justified in int32
        return data / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(float) - 128.0) / 128.0
    raise ValueError(f"unsupported WAV sample type {data.dtype}")


def write_wav(path, signal: np.ndarray, sample_rate: float) -> None:
    """Write ``(channels, samples)`` as 32-bit float WAV."""
    x = np.atleast_2d(np.asarray(signal, dtype=np.float32))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, int(sample_rate), x.T)
