"""Synthetic regression testbed: clustered covariates with one linear
model per cluster, plus a piecewise-linear oracle predictor built from
the ground truth.

Each cluster gets a random coefficient vector and centroid (resampled
until the sets are mutually dissimilar), items are assigned round-robin,
covariates are sampled around the assigned centroid and then column
standardised, and labels come from the assigned cluster's linear model
plus Gaussian noise.  Sampling is conditioned on each item landing in its
own cluster's nearest-centroid cell, so the oracle reproduces noise-free
labels exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import REGRESSION, Dataset, _readonly
from .explainers import Predictor

DEFAULT_N = 5000
DEFAULT_M = 11
DEFAULT_K_CLUSTERS = 5
DEFAULT_SPREAD = 1.0
DEFAULT_SIGMA_E = 2.0

# "Too similar" thresholds for the rejection loop.
MAX_BETA_COSINE = 0.9
MIN_CENTROID_DISTANCE = 1.0

_MAX_ATTEMPTS = 10_000


class GenerationError(RuntimeError):
    """The generator spec is infeasible (rejection loop exhausted)."""


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = DEFAULT_N
    n_features: int = DEFAULT_M
    k_clusters: int = DEFAULT_K_CLUSTERS
    spread: float = DEFAULT_SPREAD
    sigma_e: float = DEFAULT_SIGMA_E
    seed: int = 0
    max_beta_cosine: float = MAX_BETA_COSINE
    min_centroid_distance: float = MIN_CENTROID_DISTANCE

    def __post_init__(self):
        if self.n_items < self.k_clusters or self.k_clusters < 1:
            raise ValueError("need n_items >= k_clusters >= 1")
        if self.n_features < 1:
            raise ValueError("n_features must be positive")
        if not self.spread > 0.0:
            raise ValueError("spread must be > 0")
        if self.sigma_e < 0.0:
            raise ValueError("sigma_e must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_features": self.n_features,
            "k_clusters": self.k_clusters,
            "spread": self.spread,
            "sigma_e": self.sigma_e,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class SyntheticGroundTruth:
    """What the generator drew: per-cluster models, centroids (original
    coordinates), cluster assignment, and the standardisation applied to X."""

    beta: np.ndarray          # (k, M+1), acts on standardised coordinates
    centroids: np.ndarray     # (k, M), original coordinates
    cluster_id: np.ndarray    # (N,)
    feature_mean: np.ndarray  # (M,)
    feature_scale: np.ndarray # (M,)

    def __post_init__(self):
        object.__setattr__(self, "beta", _readonly(self.beta))
        object.__setattr__(self, "centroids", _readonly(self.centroids))
        object.__setattr__(self, "cluster_id", _readonly(self.cluster_id, dtype=int))
        object.__setattr__(self, "feature_mean", _readonly(self.feature_mean))
        object.__setattr__(self, "feature_scale", _readonly(self.feature_scale))


def _too_similar(beta: np.ndarray, centroids: np.ndarray, spec: SyntheticSpec) -> bool:
    k = beta.shape[0]
    if k == 1:
        return False
    unit = beta / np.linalg.norm(beta, axis=1, keepdims=True)
    cos = unit @ unit.T
    iu = np.triu_indices(k, 1)
    if (cos[iu] > spec.max_beta_cosine).any():
        return True
    diff = centroids[:, None, :] - centroids[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    return bool((dist[iu] < spec.min_centroid_distance).any())


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, SyntheticGroundTruth]:
    """Draw a dataset and its ground truth from the spec, deterministically."""
    rng = np.random.default_rng(spec.seed)
    k, M, N = spec.k_clusters, spec.n_features, spec.n_items

    for attempt in range(_MAX_ATTEMPTS):
        beta = rng.standard_normal((k, M + 1))
        centroids = rng.standard_normal((k, M))
        if not _too_similar(beta, centroids, spec):
            break
    else:
        raise GenerationError(
            f"could not draw {k} mutually dissimilar clusters in {_MAX_ATTEMPTS} attempts"
        )

    cluster_id = np.arange(N) % k  # round-robin: exact balance

    # Sample around the assigned centroid, conditioned on staying in the
    # assigned cluster's nearest-centroid cell (keeps the oracle exact).
    X = rng.normal(centroids[cluster_id], spec.spread)
    for attempt in range(_MAX_ATTEMPTS):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        bad = d2.argmin(axis=1) != cluster_id
        if not bad.any():
            break
        X[bad] = rng.normal(centroids[cluster_id[bad]], spec.spread)
    else:
        raise GenerationError(
            f"rejection sampling did not settle into cluster cells in {_MAX_ATTEMPTS} rounds"
        )

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    if (scale == 0.0).any():
        raise GenerationError("degenerate feature with zero variance")
    Xs = (X - mean) / scale

    clean = (Xs * beta[cluster_id, :-1]).sum(axis=1) + beta[cluster_id, -1]
    y = clean + rng.normal(0.0, spec.sigma_e, N) if spec.sigma_e > 0 else clean

    data = Dataset(Xs, y, task=REGRESSION)
    truth = SyntheticGroundTruth(
        beta=beta,
        centroids=centroids,
        cluster_id=cluster_id,
        feature_mean=mean,
        feature_scale=scale,
    )
    return data, truth


def oracle_predictor(truth: SyntheticGroundTruth) -> Predictor:
    """Noise-free piecewise-linear closed box built from the ground truth.

    Maps standardised inputs back to original coordinates, finds the
    nearest centroid there, and applies that cluster's linear model.
    """
    beta = truth.beta
    centroids = truth.centroids
    mean = truth.feature_mean
    scale = truth.feature_scale
    M = centroids.shape[1]

    def fn(Xs: np.ndarray) -> np.ndarray:
        X = Xs * scale + mean
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        j = d2.argmin(axis=1)
        return (Xs * beta[j, :-1]).sum(axis=1) + beta[j, -1]

    return Predictor(fn=fn, task=REGRESSION, n_features=M)


def cluster_of(truth: SyntheticGroundTruth, Xs) -> np.ndarray:
    """Ground-truth cluster of standardised covariate rows (nearest centroid)."""
    Xs = np.asarray(Xs, dtype=float)
    X = Xs * truth.feature_scale + truth.feature_mean
    d2 = ((X[:, None, :] - truth.centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)
