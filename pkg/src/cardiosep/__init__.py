"""Unsupervised heart/lung sound separation with a spectrogram-frame VAE."""

from .signals import (HeartParams, LungParams, MixtureSignal, SourceSignal,
                      dominance_labels, gen_heart, gen_lung, mix)
from .dsp import (ComplexSpectrogram, FeatureStats, denormalize, fit_stats,
                  istft, log_mag, normalize, stft)
from .vae import (GaussianPosterior, LossBreakdown, SpectrogramVAE, VAEModel,
                  decode, encode, kl_divergence, loss, reparameterize, train)
from .latent import (Clustering, ExactTSNE, LatentKMeans, kmeans, purity,
                     silhouette, tsne)
from .separate import (FrameAssignment, SeparatedSources, SeparationReport,
                       assign_frames, compute_masks, evaluate,
                       log_spectral_distance, reconstruct, si_sdr)
from .fileio import (RunConfig, export_csv, load_checkpoint, read_wav,
                     save_checkpoint, write_wav)

__all__ = [
    "HeartParams", "LungParams", "MixtureSignal", "SourceSignal",
    "dominance_labels", "gen_heart", "gen_lung", "mix",
    "ComplexSpectrogram", "FeatureStats", "denormalize", "fit_stats",
    "istft", "log_mag", "normalize", "stft",
    "GaussianPosterior", "LossBreakdown", "SpectrogramVAE", "VAEModel",
    "decode", "encode", "kl_divergence", "loss", "reparameterize", "train",
    "Clustering", "ExactTSNE", "LatentKMeans", "kmeans", "purity",
    "silhouette", "tsne",
    "FrameAssignment", "SeparatedSources", "SeparationReport",
    "assign_frames", "compute_masks", "evaluate", "log_spectral_distance",
    "reconstruct", "si_sdr",
    "RunConfig", "read_wav", "write_wav", "export_csv",
    "save_checkpoint", "load_checkpoint",
]

__version__ = "0.1.0"
