"""Local explanation generators against a pluggable closed-box predictor.

Two explainers are provided: a gradient-averaging one (finite-difference
gradients sampled around the anchor, averaged, anchored so the plane
passes through the anchor's prediction) and a sampling-based weighted
ridge fit in the anchor's neighbourhood.  Both return one linear model
row per anchor, with the intercept last.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    BINARY_CLASSIFICATION,
    LINEAR_REGRESSION,
    LOGISTIC_REGRESSION,
    PROB_EPS,
    TASKS,
    Dataset,
    LocalModelSet,
)

EXPLAINER_METHODS = ("smoothgrad", "lime-lite", "ingest")

DEFAULT_SUBSAMPLE = 500


class DegenerateSamplingError(RuntimeError):
    """Singular normal equations while fitting a local surrogate."""


@dataclass(frozen=True)
class Predictor:
    """Evaluation contract for a closed-box model.

    ``fn`` maps a batch of covariate rows to one prediction per row and
    must be pure: identical inputs give identical outputs.  Classification
    predictors return probabilities of the positive class.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    task: str
    n_features: int

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.n_features < 1:
            raise ValueError("n_features must be positive")

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"predictor expects inputs of shape (*, {self.n_features}), got {X.shape}"
            )
        out = np.asarray(self.fn(X), dtype=float).reshape(-1)
        if out.shape[0] != X.shape[0]:
            raise ValueError("predictor must return one prediction per input row")
        if not np.isfinite(out).all():
            raise ValueError("predictor returned a non-finite value")
        if self.task == BINARY_CLASSIFICATION and ((out < 0.0) | (out > 1.0)).any():
            raise ValueError("classification predictor must return probabilities in [0, 1]")
        return out


@dataclass(frozen=True)
class ExplainerConfig:
    method: str = "smoothgrad"
    noise_sigma: float = 0.3
    n_perturbations: int = 100
    kernel_width: float = 1.0
    ridge_lambda: float = 1e-3
    fd_step: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.method not in EXPLAINER_METHODS:
            raise ValueError(f"unknown explainer method {self.method!r}")
        if not self.noise_sigma > 0.0:
            raise ValueError("noise_sigma must be > 0")
        if self.n_perturbations < 1:
            raise ValueError("n_perturbations must be positive")
        if not self.kernel_width > 0.0:
            raise ValueError("kernel_width must be > 0")
        if self.ridge_lambda < 0.0:
            raise ValueError("ridge_lambda must be >= 0")
        if not self.fd_step > 0.0:
            raise ValueError("fd_step must be > 0")


def _smoothgrad_row(f, x: np.ndarray, config: ExplainerConfig, rng: np.random.Generator) -> np.ndarray:
    M = x.shape[0]
    h = config.fd_step
    samples = x + config.noise_sigma * rng.standard_normal((config.n_perturbations, M))
    # One batched call covering all central-difference evaluations.
    steps = h * np.eye(M)
    plus = (samples[:, None, :] + steps).reshape(-1, M)
    minus = (samples[:, None, :] - steps).reshape(-1, M)
    batch = np.concatenate([plus, minus, x[None, :]])
    values = f(batch)
    fp = values[: plus.shape[0]].reshape(config.n_perturbations, M)
    fm = values[plus.shape[0] : -1].reshape(config.n_perturbations, M)
    fx = values[-1]
    grads = (fp - fm) / (2.0 * h)
    slope = grads.mean(axis=0)
    intercept = fx - slope @ x
    return np.append(slope, intercept)


def smoothgrad_explain(f: Predictor, x, config: ExplainerConfig) -> np.ndarray:
    """Gradient-averaging local model at x.

    Draws ``n_perturbations`` Gaussian samples around x, estimates the
    predictor's gradient at each with central differences, averages the
    gradients into the slope, and picks the intercept so the plane passes
    through (x, f(x)).
    """
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(config.seed)
    return _smoothgrad_row(f, x, config, rng)


def _lime_row(f, x: np.ndarray, config: ExplainerConfig, rng: np.random.Generator) -> np.ndarray:
    M = x.shape[0]
    samples = x + config.noise_sigma * rng.standard_normal((config.n_perturbations, M))
    preds = f(samples)
    d2 = ((samples - x) ** 2).sum(axis=1)
    weights = np.exp(-d2 / config.kernel_width**2)
    A = np.concatenate([samples, np.ones((samples.shape[0], 1))], axis=1)
    G = A.T @ (A * weights[:, None])
    G[np.arange(M), np.arange(M)] += config.ridge_lambda  # intercept unpenalised
    b = A.T @ (weights * preds)
    try:
        phi = np.linalg.solve(G, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSamplingError(
            "singular normal equations (degenerate sampling); raise ridge_lambda"
        ) from exc
    if not np.isfinite(phi).all():
        raise DegenerateSamplingError(
            "non-finite solution to the normal equations; raise ridge_lambda"
        )
    return phi


def lime_explain(f: Predictor, x, config: ExplainerConfig) -> np.ndarray:
    """Kernel-weighted ridge surrogate at x.

    Samples points around x, weights them by exp(-||x'-x||^2 / width^2)
    and solves the weighted ridge normal equations for the best linear
    fit to the predictor; only slopes are penalised.
    """
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(config.seed)
    return _lime_row(f, x, config, rng)


def lime_objective(f_values, samples, x, phi, config: ExplainerConfig) -> float:
    """The weighted ridge objective at phi; handy for optimality checks."""
    x = np.asarray(x, dtype=float)
    samples = np.asarray(samples, dtype=float)
    d2 = ((samples - x) ** 2).sum(axis=1)
    weights = np.exp(-d2 / config.kernel_width**2)
    A = np.concatenate([samples, np.ones((samples.shape[0], 1))], axis=1)
    resid = f_values - A @ phi
    return float((weights * resid**2).sum() + config.ridge_lambda * (phi[:-1] ** 2).sum())


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return np.log(p) - np.log1p(-p)


def generate_explanations(
    f: Predictor,
    data: Dataset,
    m: int,
    config: ExplainerConfig,
) -> tuple[LocalModelSet, np.ndarray]:
    """Fit one local model at each of m anchor items sampled without
    replacement.

    Anchors are reported in ascending order, so the output is independent
    of any evaluation schedule; each anchor gets its own RNG stream
    derived from (seed, anchor index).  For classification the plane is
    fitted on the logit scale and the models are stored as logistic ones,
    so their predictions stay in (0, 1).
    """
    n = data.n_items
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in [1, {n}], got {m}")
    if config.method == "ingest":
        raise ValueError("method 'ingest' reads a serialised model set; see serialize.read_model_set")

    rng = np.random.default_rng(config.seed)
    anchors = np.sort(rng.choice(n, size=m, replace=False))

    if data.task == BINARY_CLASSIFICATION:
        target = lambda X: _logit(f(X))
        kind = LOGISTIC_REGRESSION
    else:
        target = f
        kind = LINEAR_REGRESSION

    fit = _smoothgrad_row if config.method == "smoothgrad" else _lime_row
    rows = np.empty((m, data.n_features + 1))
    for j, a in enumerate(anchors):
        anchor_rng = np.random.default_rng([config.seed, int(a)])
        rows[j] = fit(target, data.X[a], config, anchor_rng)
    return LocalModelSet(kind, rows, origin=anchors), anchors


def oracle_from_function(fn, task: str, n_features: int) -> Predictor:
    """Wrap a plain vectorised function as a Predictor."""
    return Predictor(fn=fn, task=task, n_features=n_features)


def knn_predictor(train_data: Dataset, n_neighbors: int = 5) -> Predictor:
    """Brute-force k-nearest-neighbour predictor fitted on a training split.

    Predicts the mean label of the neighbours, which for classification
    data is a probability in [0, 1].  Pure and deterministic.
    """
    X = train_data.X
    y = train_data.y
    if not 1 <= n_neighbors <= train_data.n_items:
        raise ValueError("n_neighbors must lie in [1, n]")
    sq = (X**2).sum(axis=1)

    def fn(Q: np.ndarray) -> np.ndarray:
        out = np.empty(Q.shape[0])
        chunk = max(1, int(2**22 // max(X.shape[0], 1)))
        for start in range(0, Q.shape[0], chunk):
            q = Q[start : start + chunk]
            # ||q - x||^2 up to the constant ||q||^2, which argsort ignores
            d2 = sq[None, :] - 2.0 * (q @ X.T)
            if n_neighbors < X.shape[0]:
                idx = np.argpartition(d2, n_neighbors - 1, axis=1)[:, :n_neighbors]
            else:
                idx = np.broadcast_to(np.arange(X.shape[0]), (len(q), X.shape[0]))
            out[start : start + chunk] = y[idx].mean(axis=1)
        return out

    return Predictor(fn=fn, task=train_data.task, n_features=train_data.n_features)
