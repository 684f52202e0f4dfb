"""Synthetic heart/lung sound generation and mixing.

Everything here is deterministic given (params, duration, sample_rate, seed),
so downstream separation claims can be checked against known ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VALID_KINDS = ("heart", "lung", "other")

# relative S2 loudness and envelope constants for the synthetic models
_S2_AMPLITUDE = 0.5
_EXHALE_AMPLITUDE = 0.6
_ENVELOPE_FLOOR = 0.05
_PEAK_TARGET = 0.9


@dataclass
class SourceSignal:
    """A single-channel source waveform with amplitude bounded by 1."""

    samples: np.ndarray
    sample_rate: float
    kind: str = "other"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0 + 1e-12:
            raise ValueError("samples exceed [-1, 1]")
        if self.kind not in VALID_KINDS:
            raise ValueError(f"kind must be one of {VALID_KINDS}, got {self.kind!r}")

    def __len__(self):
        return self.samples.size


@dataclass
class MixtureSignal:
    """Weighted sum of aligned sources, globally rescaled if it clips.

    ``component_gains`` are the effective per-source gains after the global
    rescale, i.e. samples == sum_i component_gains[i] * sources[i] exactly.
    ``peak_rescale`` is the single global factor applied (1.0 if no clipping).
    """

    samples: np.ndarray
    sample_rate: float
    component_gains: list = field(default_factory=list)
    peak_rescale: float = 1.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("mixture samples contain non-finite values")

    def __len__(self):
        return self.samples.size


@dataclass
class HeartParams:
    rate_bpm: float = 60.0
    s1_freq: float = 70.0
    s2_freq: float = 120.0
    s1_s2_interval: float = 0.3
    decay: float = 35.0
    jitter_pct: float = 0.0


@dataclass
class LungParams:
    breaths_per_min: float = 15.0
    band_low: float = 150.0
    band_high: float = 800.0
    inhale_exhale_ratio: float = 0.7


def _validate_common(duration, sample_rate):
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")


def gen_heart(params: HeartParams, duration: float, sample_rate: float,
              seed: int) -> SourceSignal:
    """Periodic S1/S2 train of exponentially damped sinusoids.

    Peak-normalized to 0.9.  Bit-identical output for identical inputs.
    """
    _validate_common(duration, sample_rate)
    nyquist = sample_rate / 2.0
    if params.rate_bpm <= 0:
        raise ValueError(f"rate_bpm must be positive, got {params.rate_bpm}")
    period = 60.0 / params.rate_bpm
    if not 0.0 < params.s1_s2_interval < period:
        raise ValueError(
            f"s1_s2_interval must lie in (0, {period}), got {params.s1_s2_interval}")
    if params.s1_freq >= nyquist or params.s2_freq >= nyquist:
        raise ValueError(
            f"S1/S2 frequencies ({params.s1_freq}, {params.s2_freq}) must be "
            f"below Nyquist ({nyquist})")
    if params.decay <= 0:
        raise ValueError(f"decay must be positive, got {params.decay}")

    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    # each burst decays to <1% of its peak after 5 time constants
    burst_len = int(round(5.0 / params.decay * sample_rate))
    tau = np.arange(burst_len) / sample_rate

    def add_burst(onset_s, freq, amp):
        start = int(round(onset_s * sample_rate))
        if start >= n:
            return
        seg = amp * np.exp(-params.decay * tau) * np.sin(2 * np.pi * freq * tau)
        stop = min(start + burst_len, n)
        out[start:stop] += seg[:stop - start]

    beat = 0
    while beat * period < duration:
        jitter = 0.0
        if params.jitter_pct > 0:
            jitter = rng.uniform(-1.0, 1.0) * params.jitter_pct / 100.0 * period
        onset = beat * period + jitter
        if onset >= 0:
            add_burst(onset, params.s1_freq, 1.0)
            add_burst(onset + params.s1_s2_interval, params.s2_freq, _S2_AMPLITUDE)
        beat += 1

    peak = np.max(np.abs(out))
    if peak > 0:
        out *= _PEAK_TARGET / peak
    return SourceSignal(out, sample_rate, kind="heart")


def _breathing_envelope(t, breaths_per_min, inhale_exhale_ratio):
    """Asymmetric inhale/exhale amplitude envelope, never fully silent."""
    period = 60.0 / breaths_per_min
    r = inhale_exhale_ratio
    t_inhale = period * r / (1.0 + r)
    phase = np.mod(t, period)
    env = np.full(t.shape, _ENVELOPE_FLOOR)
    inhale = phase < t_inhale
    env[inhale] += (1.0 - _ENVELOPE_FLOOR) * np.sin(np.pi * phase[inhale] / t_inhale)
    exhale = ~inhale
    env[exhale] += (_EXHALE_AMPLITUDE - _ENVELOPE_FLOOR) * np.sin(
        np.pi * (phase[exhale] - t_inhale) / (period - t_inhale))
    return env


def gen_lung(params: LungParams, duration: float, sample_rate: float,
             seed: int) -> SourceSignal:
    """Band-limited noise amplitude-modulated by a breathing envelope."""
    _validate_common(duration, sample_rate)
    nyquist = sample_rate / 2.0
    if not 0.0 < params.band_low < params.band_high:
        raise ValueError(
            f"need 0 < band_low < band_high, got ({params.band_low}, {params.band_high})")
    if params.band_high >= nyquist:
        raise ValueError(
            f"band_high ({params.band_high}) must be below Nyquist ({nyquist})")
    if params.breaths_per_min <= 0:
        raise ValueError(f"breaths_per_min must be positive, got {params.breaths_per_min}")
    if params.inhale_exhale_ratio <= 0:
        raise ValueError(
            f"inhale_exhale_ratio must be positive, got {params.inhale_exhale_ratio}")

    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    noise = rng.standard_normal(n)
    # exact band limiting in the frequency domain
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spectrum[(freqs < params.band_low) | (freqs > params.band_high)] = 0.0
    band_noise = np.fft.irfft(spectrum, n=n)

    t = np.arange(n) / sample_rate
    out = band_noise * _breathing_envelope(t, params.breaths_per_min,
                                           params.inhale_exhale_ratio)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= _PEAK_TARGET / peak
    return SourceSignal(out, sample_rate, kind="lung")


def mix(sources: list, gains: list) -> MixtureSignal:
    """Samplewise weighted sum, rescaled by one global factor if it clips."""
    if len(sources) == 0:
        raise ValueError("need at least one source")
    if len(gains) != len(sources):
        raise ValueError(f"got {len(sources)} sources but {len(gains)} gains")
    if not np.all(np.isfinite(gains)):
        raise ValueError("gains must be finite")
    length = len(sources[0])
    rate = sources[0].sample_rate
    for i, s in enumerate(sources):
        if len(s) != length:
            raise ValueError(f"source {i} length {len(s)} != {length}")
        if s.sample_rate != rate:
            raise ValueError(f"source {i} sample_rate {s.sample_rate} != {rate}")

    total = np.zeros(length)
    for g, s in zip(gains, sources):
        total += g * s.samples
    peak = np.max(np.abs(total)) if length else 0.0
    factor = 1.0 / peak if peak > 1.0 else 1.0
    return MixtureSignal(total * factor, rate,
                         component_gains=[g * factor for g in gains],
                         peak_rescale=factor)


def dominance_labels(sources: list, frame_len: int, hop: int) -> np.ndarray:
    """Per STFT frame, the index of the source with the largest energy.

    Frame t covers samples [t*hop, t*hop + frame_len); ties go to the
    lowest source index.
    """
    if len(sources) == 0:
        raise ValueError("need at least one source")
    if hop <= 0 or frame_len < hop:
        raise ValueError(f"need frame_len >= hop > 0, got ({frame_len}, {hop})")
    length = len(sources[0])
    for i, s in enumerate(sources):
        if len(s) != length:
            raise ValueError(f"source {i} length {len(s)} != {length}")
    if length < frame_len:
        raise ValueError(f"sources shorter ({length}) than one frame ({frame_len})")

    n_frames = (length - frame_len) // hop + 1
    energies = np.empty((len(sources), n_frames))
    for i, s in enumerate(sources):
        for t in range(n_frames):
            seg = s.samples[t * hop:t * hop + frame_len]
            energies[i, t] = np.dot(seg, seg)
    return np.argmax(energies, axis=0)
