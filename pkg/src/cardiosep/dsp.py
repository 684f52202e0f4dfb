"""Time-frequency analysis and feature extraction.

The observed variable fed to the model is one normalized log-magnitude
STFT column; this module owns the transform, its inverse, and the
per-bin normalization statistics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_N_FFT = 256
DEFAULT_HOP = 64
DEFAULT_FLOOR = 1e-5
STD_FLOOR = 1e-6


@dataclass
class ComplexSpectrogram:
    """One-sided STFT matrix (freq_bins x frames) plus its framing metadata."""

    bins: np.ndarray
    n_fft: int
    hop: int
    sample_rate: float
    window: str = "hann"

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2 or self.bins.shape[0] != self.n_fft // 2 + 1:
            raise ValueError(
                f"expected {self.n_fft // 2 + 1} frequency bins, got shape {self.bins.shape}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"need 0 < hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if not np.all(np.isfinite(self.bins)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self):
        return self.bins.shape[1]


@dataclass
class FeatureStats:
    """Per-bin mean and (floored) standard deviation of log-magnitude frames."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std shape mismatch")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive elementwise")


def hann_window(n_fft: int) -> np.ndarray:
    """Periodic Hann window (satisfies constant overlap-add for hop = n_fft/k)."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft))


def _signal_samples(signal) -> np.ndarray:
    return np.asarray(getattr(signal, "samples", signal), dtype=np.float64)


def stft(signal, n_fft: int = DEFAULT_N_FFT, hop: int = DEFAULT_HOP,
         sample_rate: float | None = None) -> ComplexSpectrogram:
    """Hann-windowed one-sided STFT; frame t covers [t*hop, t*hop + n_fft)."""
    x = _signal_samples(signal)
    if sample_rate is None:
        sample_rate = getattr(signal, "sample_rate", 1.0)
    if n_fft <= 0 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ValueError(f"need 0 < hop <= n_fft, got hop={hop}")
    if x.size < n_fft:
        raise ValueError(f"signal length {x.size} shorter than n_fft {n_fft}")

    n_frames = (x.size - n_fft) // hop + 1
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * hann_window(n_fft)[None, :]
    bins = np.fft.rfft(frames, axis=1).T
    return ComplexSpectrogram(bins, n_fft, hop, sample_rate)


def istft(spec: ComplexSpectrogram) -> np.ndarray:
    """Weighted overlap-add synthesis; exact on the interior for COLA hops."""
    n_fft, hop = spec.n_fft, spec.hop
    if n_fft % hop != 0 or hop >= n_fft:
        raise ValueError(
            f"hop {hop} does not satisfy constant overlap-add for n_fft {n_fft} "
            "(need hop to divide n_fft, hop < n_fft)")
    frames = np.fft.irfft(spec.bins.T, n=n_fft, axis=1)
    w = hann_window(n_fft)
    length = (spec.n_frames - 1) * hop + n_fft
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(spec.n_frames):
        out[t * hop:t * hop + n_fft] += w * frames[t]
        norm[t * hop:t * hop + n_fft] += w * w
    good = norm > 1e-12
    out[good] /= norm[good]
    return out


def log_mag(spec: ComplexSpectrogram, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Per-column log-magnitude features, (n_frames x freq_bins)."""
    if floor <= 0:
        raise ValueError(f"floor must be positive, got {floor}")
    return np.log(np.maximum(np.abs(spec.bins), floor)).T


def fit_stats(frames: np.ndarray) -> FeatureStats:
    """Per-bin mean/std over a frame set; std floored at 1e-6."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise ValueError("need at least 2 frames to fit statistics")
    mean = frames.mean(axis=0)
    std = np.maximum(frames.std(axis=0), STD_FLOOR)
    return FeatureStats(mean, std)


def normalize(frames: np.ndarray, stats: FeatureStats) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    return (frames - stats.mean) / stats.std


def denormalize(frames: np.ndarray, stats: FeatureStats) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    return frames * stats.std + stats.mean
