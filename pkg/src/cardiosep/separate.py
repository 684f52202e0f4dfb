"""Mixture-to-sources reconstruction and permutation-resolved scoring.

Two mask modes: HARD gates whole spectrogram columns by their cluster id;
WIENER builds per-bin ratio masks from the decoded cluster centroids.  Both
reuse the mixture phase and partition every bin, so the separated sources
always sum back to the mixture.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import dsp, latent, vae

MODES = ("hard", "wiener")
_ENERGY_EPS = 1e-30
_MASK_EPS = 1e-12


@dataclass
class FrameAssignment:
    ids: np.ndarray
    cluster_count: int
    mode: str = "wiener"

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cluster_count < 1:
            raise ValueError("cluster_count must be >= 1")
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.cluster_count):
            raise ValueError("frame ids out of range")


@dataclass
class SeparatedSources:
    signals: list
    sample_rate: float
    provenance: dict = field(default_factory=dict)


@dataclass
class SourceMetrics:
    si_sdr_db: float
    si_sdr_improvement_db: float
    lsd_db: float


@dataclass
class SeparationReport:
    per_source: list
    permutation: tuple
    purity: float | None = None

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError(f"permutation {self.permutation} is not a bijection")


def assign_frames(model: vae.VAEModel, frames: np.ndarray, c: int, seed: int,
                  restarts: int = 10, mode: str = "wiener") -> FrameAssignment:
    """Encode frames to posterior means and k-means them into c regions."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.input_dim:
        raise ValueError(
            f"frames have dimension {frames.shape[-1]}, model expects {model.input_dim}")
    if c < 1:
        raise ValueError("cluster count must be >= 1")
    mu = vae.encode(model, frames).mu
    clustering = latent.kmeans(mu, c, restarts=restarts, seed=seed)
    return FrameAssignment(clustering.assignments, c, mode=mode)


def _wiener_masks(mix_spec, model, assignment, stats):
    """Static per-bin ratio masks from decoded cluster centroids."""
    features = dsp.normalize(dsp.log_mag(mix_spec), stats)
    mu = vae.encode(model, features).mu
    n_bins = mix_spec.bins.shape[0]
    magnitudes = np.empty((assignment.cluster_count, n_bins))
    for j in range(assignment.cluster_count):
        members = assignment.ids == j
        centroid = mu[members].mean(axis=0) if np.any(members) \
            else np.zeros(model.latent_dim)
        magnitudes[j] = np.exp(dsp.denormalize(vae.decode(model, centroid), stats))
    power = magnitudes ** 2
    denom = power.sum(axis=0)
    masks = np.where(denom[None, :] < _MASK_EPS,
                     1.0 / assignment.cluster_count,
                     power / np.maximum(denom[None, :], _MASK_EPS))
    return masks[:, :, None]  # (sources, bins, 1) -> broadcast over frames


def compute_masks(mix_spec: dsp.ComplexSpectrogram, model: vae.VAEModel,
                  assignment: FrameAssignment, stats: dsp.FeatureStats,
                  mode: str | None = None) -> np.ndarray:
    """Per-source masks, (sources, bins, frames); they sum to 1 in every bin."""
    if assignment.ids.size != mix_spec.n_frames:
        raise ValueError(
            f"assignment covers {assignment.ids.size} frames, spectrogram has "
            f"{mix_spec.n_frames}")
    mode = mode or assignment.mode
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    c = assignment.cluster_count
    n_bins = mix_spec.bins.shape[0]
    if mode == "hard":
        masks = np.zeros((c, n_bins, mix_spec.n_frames))
        masks[assignment.ids, :, np.arange(mix_spec.n_frames)] = 1.0
    else:
        masks = np.broadcast_to(_wiener_masks(mix_spec, model, assignment, stats),
                                (c, n_bins, mix_spec.n_frames)).copy()
    return masks


def reconstruct(mix_spec: dsp.ComplexSpectrogram, model: vae.VAEModel,
                assignment: FrameAssignment, stats: dsp.FeatureStats,
                mode: str | None = None) -> SeparatedSources:
    """Mask the mixture spectrogram per source and overlap-add back to audio."""
    mode = mode or assignment.mode
    masks = compute_masks(mix_spec, model, assignment, stats, mode)
    c = assignment.cluster_count
    signals = []
    for i in range(c):
        masked = dsp.ComplexSpectrogram(mix_spec.bins * masks[i], mix_spec.n_fft,
                                        mix_spec.hop, mix_spec.sample_rate)
        signals.append(dsp.istft(masked))
    return SeparatedSources(signals, mix_spec.sample_rate,
                            provenance={"mode": mode, "clusters": c})


def si_sdr(est, ref) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    Returns +inf when the distortion energy underflows and -inf when the
    target projection does; both are explicit sentinels, never clamps.
    """
    est = np.asarray(getattr(est, "samples", est), dtype=np.float64)
    ref = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: est {est.shape}, ref {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy <= 0:
        raise ValueError("reference signal is all zero")
    target = (np.dot(est, ref) / ref_energy) * ref
    noise = est - target
    s_energy = np.dot(target, target)
    e_energy = np.dot(noise, noise)
    if e_energy < _ENERGY_EPS:
        return math.inf
    if s_energy < _ENERGY_EPS:
        return -math.inf
    return 10.0 * np.log10(s_energy / e_energy)


def log_spectral_distance(est, ref, n_fft: int = dsp.DEFAULT_N_FFT,
                          hop: int = dsp.DEFAULT_HOP,
                          floor: float = dsp.DEFAULT_FLOOR) -> float:
    """RMS over TF bins of the dB magnitude difference, floored at `floor`."""
    est = np.asarray(getattr(est, "samples", est), dtype=np.float64)
    ref = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: est {est.shape}, ref {ref.shape}")
    if est.size < n_fft:
        raise ValueError(f"signals shorter ({est.size}) than n_fft ({n_fft})")
    mag_est = np.maximum(np.abs(dsp.stft(est, n_fft, hop).bins), floor)
    mag_ref = np.maximum(np.abs(dsp.stft(ref, n_fft, hop).bins), floor)
    diff_db = 20.0 * (np.log10(mag_est) - np.log10(mag_ref))
    return float(np.sqrt(np.mean(diff_db ** 2)))


def evaluate(separated: SeparatedSources, references: list,
             mixture=None, n_fft: int = dsp.DEFAULT_N_FFT,
             hop: int = dsp.DEFAULT_HOP,
             purity_score: float | None = None) -> SeparationReport:
    """Score estimates against references under the best permutation.

    All pairings are tried; the permutation maximizing mean SI-SDR wins.
    SI-SDR improvement is relative to scoring the raw mixture against each
    reference (NaN when no mixture is supplied).
    """
    estimates = [np.asarray(getattr(s, "samples", s), dtype=np.float64)
                 for s in separated.signals]
    if len(estimates) != len(references):
        raise ValueError(
            f"{len(estimates)} estimates but {len(references)} references")
    n = min(min(len(e) for e in estimates),
            min(len(np.asarray(getattr(r, 'samples', r))) for r in references))
    estimates = [e[:n] for e in estimates]
    refs = [np.asarray(getattr(r, "samples", r), dtype=np.float64)[:n]
            for r in references]
    mix_trim = None
    if mixture is not None:
        mix_trim = np.asarray(getattr(mixture, "samples", mixture),
                              dtype=np.float64)[:n]

    scores = np.array([[si_sdr(e, r) for r in refs] for e in estimates])
    best_perm, best_mean = None, -math.inf
    for perm in itertools.permutations(range(len(refs))):
        mean = np.mean([scores[i, perm[i]] for i in range(len(refs))])
        if mean > best_mean:
            best_mean, best_perm = mean, perm

    per_source = []
    for i, j in enumerate(best_perm):
        sdr = scores[i, j]
        if mix_trim is not None:
            improvement = sdr - si_sdr(mix_trim, refs[j])
        else:
            improvement = math.nan
        lsd = log_spectral_distance(estimates[i], refs[j], n_fft, hop)
        per_source.append(SourceMetrics(sdr, improvement, lsd))
    return SeparationReport(per_source, tuple(best_perm), purity_score)
