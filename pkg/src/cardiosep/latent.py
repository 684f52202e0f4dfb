"""Latent-space structure: exact t-SNE, k-means, and cluster quality scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

TSNE_PERPLEXITY = 30.0
TSNE_ITERS = 1000
TSNE_LEARNING_RATE = 200.0
TSNE_EARLY_EXAGGERATION = 12.0
TSNE_MOMENTUM_SWITCH = 250
TSNE_BISECTION_STEPS = 30
TSNE_ENTROPY_TOL = 1e-5
KMEANS_MAX_ITERS = 300

_EPS = 1e-12


def _squared_distances(points):
    sq = np.sum(points ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _row_probabilities(d2_row, beta):
    p = np.exp(-d2_row * beta)
    s = p.sum()
    if s <= 0:
        return np.full_like(p, 1.0 / p.size)
    return p / s


def _entropy_bits(p):
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def perplexity_probabilities(d2: np.ndarray, perplexity: float,
                             steps: int = TSNE_BISECTION_STEPS,
                             tol: float = TSNE_ENTROPY_TOL):
    """Per-row Gaussian conditional probabilities matched to a perplexity.

    The bandwidth (precision) of each row is found by bisection so that the
    row entropy equals log2(perplexity) within `tol` (or `steps` halvings).
    Returns (P_conditional with zero diagonal, per-row entropy in bits).
    """
    n = d2.shape[0]
    if perplexity <= 1:
        raise ValueError(f"perplexity must exceed 1, got {perplexity}")
    target = np.log2(perplexity)
    p_cond = np.zeros((n, n))
    entropies = np.zeros(n)
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        row = d2[i][mask[i]]
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        p = _row_probabilities(row, beta)
        h = _entropy_bits(p)
        for _ in range(steps):
            if abs(h - target) <= tol:
                break
            if h > target:  # too flat: increase precision
                beta_lo = beta
                beta = beta * 2.0 if np.isinf(beta_hi) else 0.5 * (beta_lo + beta_hi)
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else 0.5 * (beta_lo + beta_hi)
            p = _row_probabilities(row, beta)
            h = _entropy_bits(p)
        p_cond[i][mask[i]] = p
        entropies[i] = h
    return p_cond, entropies


def joint_probabilities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized t-SNE P matrix; non-negative, sums to 1."""
    p_cond, _ = perplexity_probabilities(_squared_distances(points), perplexity)
    p = (p_cond + p_cond.T) / (2.0 * points.shape[0])
    return np.maximum(p, 0.0)


def tsne(points: np.ndarray, perplexity: float = TSNE_PERPLEXITY,
         iters: int = TSNE_ITERS, seed: int = 0,
         return_costs: bool = False):
    """Exact O(N^2) t-SNE to 2-D.

    Gradient descent with momentum 0.5 switching to 0.8 at iteration 250,
    learning rate 200, early exaggeration x12 for the first 250 iterations,
    and seeded N(0, 1e-4) initial coordinates.  The embedding is centered
    every iteration.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("need a 2-D array with at least 2 points")
    n = points.shape[0]
    if 3.0 * perplexity >= n:
        raise ValueError(f"perplexity {perplexity} too large for {n} points "
                         "(need 3*perplexity < N)")
    if iters < 250:
        raise ValueError(f"need at least 250 iterations, got {iters}")
    d2 = _squared_distances(points)
    if np.max(d2) <= 0:
        raise ValueError("all points are identical; jitter the input first")

    p = joint_probabilities(points, perplexity)
    p = np.maximum(p, _EPS)

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-2, size=(n, 2))  # std 1e-2 -> variance 1e-4
    update = np.zeros_like(y)
    costs = []
    for it in range(iters):
        exaggeration = TSNE_EARLY_EXAGGERATION if it < 250 else 1.0
        momentum = 0.5 if it < TSNE_MOMENTUM_SWITCH else 0.8

        num = 1.0 / (1.0 + _squared_distances(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), _EPS)

        pq = (exaggeration * p - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)

        update = momentum * update - TSNE_LEARNING_RATE * grad
        y = y + update
        y = y - y.mean(axis=0)
        if return_costs:
            costs.append(float(np.sum(p * np.log(p / q))))
    if return_costs:
        return y, costs
    return y


@dataclass
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float


def _kmeans_pp_init(points, c, rng):
    n = points.shape[0]
    centroids = np.empty((c, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, c):
        total = d2.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points, centroids, max_iters=KMEANS_MAX_ITERS):
    assignments = None
    for _ in range(max_iters):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)  # ties resolve to the lower index
        for j in range(centroids.shape[0]):
            members = new_assign == j
            if not np.any(members):
                # repair: steal the point farthest from its current centroid
                worst = np.argmax(d2[np.arange(len(points)), new_assign])
                centroids[j] = points[worst]
                new_assign[worst] = j
            else:
                centroids[j] = points[members].mean(axis=0)
        if assignments is not None and np.array_equal(assignments, new_assign):
            break
        assignments = new_assign
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    assignments = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(points)), assignments].sum())
    return assignments, centroids, inertia


def kmeans(points: np.ndarray, c: int, restarts: int = 10, seed: int = 0) -> Clustering:
    """k-means++ seeding, Lloyd iterations, best inertia over seeded restarts."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if c < 1:
        raise ValueError(f"cluster count must be >= 1, got {c}")
    if c > n:
        raise ValueError(f"cluster count {c} exceeds point count {n}")
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centroids = _kmeans_pp_init(points, c, rng)
        assignments, centroids, inertia = _lloyd(points, centroids)
        if best is None or inertia < best.inertia:
            best = Clustering(assignments, centroids.copy(), inertia)
    return best


def purity(assignments, labels) -> float:
    """Fraction of points in their cluster's majority true-label class."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    if assignments.shape != labels.shape or assignments.size == 0:
        raise ValueError("assignments and labels must be non-empty and equal length")
    correct = 0
    for cluster in np.unique(assignments):
        member_labels = labels[assignments == cluster]
        _, counts = np.unique(member_labels, return_counts=True)
        correct += counts.max()
    return correct / assignments.size


def silhouette(points, labels) -> float:
    """Mean silhouette score; singleton clusters contribute 0."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    labels = np.asarray(labels)
    n = points.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points")
    if labels.shape[0] != n:
        raise ValueError("labels length must match point count")
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("need at least 2 clusters")
    dist = np.sqrt(_squared_distances(points))
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        own_size = own.sum()
        if own_size == 1:
            continue
        a = dist[i][own].sum() / (own_size - 1)
        b = min(dist[i][labels == other].mean() for other in uniq if other != labels[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


class ExactTSNE(BaseEstimator):
    """Estimator facade for the exact t-SNE embedding."""

    def __init__(self, perplexity=TSNE_PERPLEXITY, iters=TSNE_ITERS, seed=0):
        self.perplexity = perplexity
        self.iters = iters
        self.seed = seed

    def fit_transform(self, X, y=None):
        self.embedding_ = tsne(np.asarray(X), perplexity=self.perplexity,
                               iters=self.iters, seed=self.seed)
        return self.embedding_


class LatentKMeans(BaseEstimator, ClusterMixin):
    """Estimator facade for the seeded-restart k-means."""

    def __init__(self, n_clusters=2, restarts=10, seed=0):
        self.n_clusters = n_clusters
        self.restarts = restarts
        self.seed = seed

    def fit(self, X, y=None):
        result = kmeans(np.asarray(X), self.n_clusters, self.restarts, self.seed)
        self.labels_ = result.assignments
        self.cluster_centers_ = result.centroids
        self.inertia_ = result.inertia
        return self

    def predict(self, X):
        d2 = np.sum((np.asarray(X)[:, None, :]
                     - self.cluster_centers_[None, :, :]) ** 2, axis=2)
        return np.argmin(d2, axis=1)
