"""Variational autoencoder over spectrogram frames.

Gaussian posterior from the encoder, unit-variance Gaussian decoder
likelihood (so the reconstruction term is 0.5 * MSE), standard-normal
prior, and a seeded minibatch Adam training loop with per-epoch latent
snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import nngrad
from .nngrad import MLP, Tape, Var

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

DEFAULT_INPUT_DIM = 129
DEFAULT_LATENT_DIM = 8
DEFAULT_HIDDEN = (64, 32)


@dataclass
class GaussianPosterior:
    """Mean and log-variance of the variational posterior."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mu.shape != self.logvar.shape:
            raise ValueError("mu/logvar shape mismatch")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.logvar))):
            raise ValueError("posterior parameters must be finite")


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    total: float


class VAEModel:
    """Encoder/decoder MLP pair with a fixed standard-normal prior."""

    def __init__(self, input_dim=DEFAULT_INPUT_DIM, latent_dim=DEFAULT_LATENT_DIM,
                 hidden=DEFAULT_HIDDEN, beta=1.0, rng=None):
        if input_dim < 1 or latent_dim < 1:
            raise ValueError("input_dim and latent_dim must be positive")
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")
        self.input_dim = int(input_dim)
        self.latent_dim = int(latent_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.beta = float(beta)
        enc_sizes = [self.input_dim, *self.hidden, 2 * self.latent_dim]
        dec_sizes = [self.latent_dim, *reversed(self.hidden), self.input_dim]
        self.encoder = MLP(enc_sizes, rng=rng, name="encoder")
        self.decoder = MLP(dec_sizes, rng=rng, name="decoder")


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} must have dimension {dim}, got shape {x.shape}")
    return x, single


def encode(model: VAEModel, x) -> GaussianPosterior:
    """Run the encoder; splits output into (mu, clamped logvar)."""
    batch, single = _as_batch(x, model.input_dim, "input frame")
    out = model.encoder.forward(Tape(), Var(batch)).value
    k = model.latent_dim
    mu, logvar = out[:, :k], np.clip(out[:, k:], LOGVAR_MIN, LOGVAR_MAX)
    if single:
        mu, logvar = mu[0], logvar[0]
    return GaussianPosterior(mu, logvar)


def reparameterize(post: GaussianPosterior, eps) -> np.ndarray:
    """z = mu + exp(logvar/2) * eps."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != post.mu.shape:
        raise ValueError(f"eps shape {eps.shape} != posterior shape {post.mu.shape}")
    return post.mu + np.exp(0.5 * post.logvar) * eps


def decode(model: VAEModel, z) -> np.ndarray:
    """Run the decoder (identity output activation)."""
    batch, single = _as_batch(z, model.latent_dim, "latent sample")
    out = model.decoder.forward(Tape(), Var(batch)).value
    return out[0] if single else out


def kl_divergence(post: GaussianPosterior) -> float:
    """Closed-form KL against the standard-normal prior; always >= 0."""
    per_dim = 0.5 * (post.mu ** 2 + np.exp(post.logvar) - 1.0 - post.logvar)
    if post.mu.ndim == 1:
        return float(np.sum(per_dim))
    return np.sum(per_dim, axis=1)


def _loss_forward(model: VAEModel, tape: Tape, x: np.ndarray, eps: np.ndarray):
    """Taped batch loss; returns (total Var, recon value, kl value)."""
    k = model.latent_dim
    enc_out = model.encoder.forward(tape, Var(x))
    mu = nngrad.slice_cols(tape, enc_out, 0, k)
    logvar = nngrad.clamp(tape, nngrad.slice_cols(tape, enc_out, k, 2 * k),
                          LOGVAR_MIN, LOGVAR_MAX)
    z = nngrad.reparam_sample(tape, mu, logvar, eps)
    x_hat = model.decoder.forward(tape, z)
    recon = nngrad.half_sse(tape, x_hat, x, scale=1.0 / x.shape[0])
    kl = nngrad.gaussian_kl(tape, mu, logvar)
    total = nngrad.add_weighted(tape, recon, kl, model.beta)
    return total, float(recon.value), float(kl.value)


def loss(model: VAEModel, x, eps) -> LossBreakdown:
    """Single-sample negative-ELBO surrogate: 0.5*MSE + beta*KL."""
    batch, _ = _as_batch(x, model.input_dim, "input frame")
    eps_b, _ = _as_batch(eps, model.latent_dim, "eps")
    if eps_b.shape[0] != batch.shape[0]:
        raise ValueError("eps batch size must match input batch size")
    total, recon, kl = _loss_forward(model, Tape(), batch, eps_b)
    return LossBreakdown(recon, kl, float(total.value))


@dataclass
class TrainResult:
    history: list
    snapshots: dict


def train(model: VAEModel, frames: np.ndarray, *, epochs: int, batch_size: int,
          lr: float, seed: int, snapshot_stride: int = 10) -> TrainResult:
    """Shuffled minibatch Adam descent on the negative ELBO.

    Deterministic per (frames, config, seed).  Snapshots hold the posterior
    means of the full frame set at every `snapshot_stride` epochs and at the
    final epoch.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.input_dim:
        raise ValueError(f"frames must be (N, {model.input_dim}), got {frames.shape}")
    if epochs < 1 or batch_size < 1 or lr <= 0 or snapshot_stride < 1:
        raise ValueError("epochs, batch_size, lr and snapshot_stride must be positive")
    n = frames.shape[0]
    if n < batch_size:
        raise ValueError(f"need at least batch_size={batch_size} frames, got {n}")

    rng = np.random.default_rng(seed)
    history = []
    snapshots = {}
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, batch_size):
            batch_idx = order[start:start + batch_size]
            x = frames[batch_idx]
            eps = rng.standard_normal((len(batch_idx), model.latent_dim))
            model.encoder.params.zero_grad()
            model.decoder.params.zero_grad()
            tape = Tape()
            try:
                total, recon, kl = _loss_forward(model, tape, x, eps)
                tape.backward(total)
                step += 1
                nngrad.adam_step(model.encoder.params, lr=lr, t=step)
                nngrad.adam_step(model.decoder.params, lr=lr, t=step)
            except FloatingPointError as exc:
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}: {exc}"
                ) from exc
            sums += np.array([recon, kl, float(total.value)]) * len(batch_idx)
        recon_m, kl_m, total_m = sums / n
        history.append(LossBreakdown(recon_m, kl_m, total_m))
        if epoch % snapshot_stride == 0 or epoch == epochs:
            snapshots[epoch] = encode(model, frames).mu
    return TrainResult(history, snapshots)


class SpectrogramVAE(BaseEstimator, TransformerMixin):
    """Estimator facade: fit on normalized frames, transform to posterior means.

    ``fit(X)`` trains a fresh model on X (rows are frames); ``transform(X)``
    returns the posterior means; ``inverse_transform(Z)`` decodes latents back
    to the feature space.
    """

    def __init__(self, input_dim=DEFAULT_INPUT_DIM, latent_dim=DEFAULT_LATENT_DIM,
                 hidden=DEFAULT_HIDDEN, beta=1.0, lr=1e-3, batch_size=64,
                 epochs=200, snapshot_stride=10, seed=0):
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.beta = beta
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.snapshot_stride = snapshot_stride
        self.seed = seed

    def fit(self, X, y=None):
        rng = np.random.default_rng(self.seed)
        self.model_ = VAEModel(self.input_dim, self.latent_dim, self.hidden,
                               self.beta, rng=rng)
        result = train(self.model_, np.asarray(X), epochs=self.epochs,
                       batch_size=self.batch_size, lr=self.lr, seed=self.seed,
                       snapshot_stride=self.snapshot_stride)
        self.history_ = result.history
        self.snapshots_ = result.snapshots
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("SpectrogramVAE is not fitted yet")

    def transform(self, X):
        self._check_fitted()
        return encode(self.model_, np.asarray(X)).mu

    def inverse_transform(self, Z):
        self._check_fitted()
        return decode(self.model_, np.asarray(Z))
