"""Core data model: datasets, local surrogate model sets, loss matrices,
proxy sets, and the item-to-model mappings tying them together.

All container types are immutable after construction (the backing arrays
are marked read-only) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REGRESSION = "regression"
BINARY_CLASSIFICATION = "binary-classification"
TASKS = (REGRESSION, BINARY_CLASSIFICATION)

LINEAR_REGRESSION = "linear-regression"
LOGISTIC_REGRESSION = "logistic-regression"
MODEL_KINDS = (LINEAR_REGRESSION, LOGISTIC_REGRESSION)

SQUARED_ERROR = "squared-error"
BINARY_CROSS_ENTROPY = "binary-cross-entropy"
LOSS_KINDS = (SQUARED_ERROR, BINARY_CROSS_ENTROPY)

REDUCTION_METHODS = (
    "greedy-max-coverage",
    "exact-max-coverage",
    "greedy-min-loss",
    "exact-min-loss",
    "const-min-loss",
    "cluster-x",
    "cluster-b",
    "cluster-l",
    "random",
)

DEFAULT_P_NORM = 2.0

# Probabilities are clamped to [eps, 1 - eps] before taking logs.
PROB_EPS = 1e-12


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Evaluated branch-wise so exp never overflows.
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariate matrix ``X`` (one item per row) with a label per item.

    For regression ``y`` holds real responses; for binary classification it
    holds probabilities of the positive class in [0, 1].  When a closed-box
    predictor is in play, ``y`` is typically its predictions (see
    :meth:`with_labels`).
    """

    X: np.ndarray
    y: np.ndarray
    task: str = REGRESSION

    def __post_init__(self):
        X = _readonly(self.X)
        y = _readonly(self.y)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("X must be a non-empty 2-D matrix")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
        if not np.isfinite(X).all():
            raise ValueError("X contains non-finite values")
        if not np.isfinite(y).all():
            raise ValueError("y contains non-finite values")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == BINARY_CLASSIFICATION and ((y < 0.0) | (y > 1.0)).any():
            raise ValueError("classification labels must lie in [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_items(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def with_labels(self, y) -> "Dataset":
        """Same covariates with replaced labels (e.g. closed-box predictions)."""
        return Dataset(self.X, y, self.task)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx], self.task)


@dataclass(frozen=True, eq=False)
class LocalModelSet:
    """A set of ``m`` simple surrogate models sharing one parametrisation.

    Coefficients sit one model per row in ``B`` with the intercept in the
    last column; inputs are implicitly augmented with a constant 1.
    Linear models predict ``B_i . [x; 1]``; logistic models pass that
    through a sigmoid.  ``origin`` optionally records the anchor item each
    model was fitted at.
    """

    kind: str
    B: np.ndarray
    origin: np.ndarray | None = None

    def __post_init__(self):
        B = _readonly(self.B)
        if B.ndim != 2 or B.shape[0] < 1 or B.shape[1] < 2:
            raise ValueError("B must be a 2-D matrix with at least one model and one feature")
        if not np.isfinite(B).all():
            raise ValueError("model coefficients must be finite")
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        origin = self.origin
        if origin is not None:
            origin = _readonly(origin, dtype=int)
            if origin.shape != (B.shape[0],):
                raise ValueError("origin must hold one anchor index per model")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "origin", origin)

    @property
    def n_models(self) -> int:
        return self.B.shape[0]

    @property
    def n_features(self) -> int:
        return self.B.shape[1] - 1

    def predict(self, X, rows=None) -> np.ndarray:
        """Prediction matrix with one row per model and one column per item.

        ``rows`` restricts evaluation to the given model indices.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected inputs with {self.n_features} features, got shape {X.shape}"
            )
        B = self.B if rows is None else self.B[np.asarray(rows, dtype=int)]
        Z = B[:, :-1] @ X.T + B[:, -1:]
        if self.kind == LOGISTIC_REGRESSION:
            return _sigmoid(Z)
        return Z


def default_loss_kind(task: str) -> str:
    return SQUARED_ERROR if task == REGRESSION else BINARY_CROSS_ENTROPY


def pointwise_loss(pred, target, loss_kind: str) -> np.ndarray:
    """Elementwise loss, broadcasting prediction rows against a target vector."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if loss_kind == SQUARED_ERROR:
        return (pred - target) ** 2
    if loss_kind == BINARY_CROSS_ENTROPY:
        p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
        return -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    raise ValueError(f"unknown loss kind {loss_kind!r}")


@dataclass(frozen=True, eq=False)
class LossMatrix:
    """Nonnegative ``m x n`` matrix of each model's loss on each item."""

    L: np.ndarray
    loss_kind: str = SQUARED_ERROR

    def __post_init__(self):
        L = _readonly(self.L)
        if L.ndim != 2 or L.shape[0] < 1 or L.shape[1] < 1:
            raise ValueError("loss matrix must be a non-empty 2-D matrix")
        if not np.isfinite(L).all():
            raise ValueError("loss matrix contains non-finite values")
        if (L < 0.0).any():
            raise ValueError("loss matrix contains negative values")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        object.__setattr__(self, "L", L)

    @property
    def n_models(self) -> int:
        return self.L.shape[0]

    @property
    def n_items(self) -> int:
        return self.L.shape[1]


def loss_array(loss) -> np.ndarray:
    """Accept a LossMatrix or a raw array and return the underlying matrix."""
    if isinstance(loss, LossMatrix):
        return loss.L
    arr = np.asarray(loss, dtype=float)
    if arr.ndim != 2:
        raise ValueError("loss must be a 2-D matrix")
    return arr


def build_loss_matrix(models: LocalModelSet, data: Dataset, loss_kind: str | None = None) -> LossMatrix:
    """Evaluate every model on every item: ``L[i, j] = loss(g_i(x_j), y_j)``.

    Pure per-entry computation, deterministic, independent of any
    evaluation order.
    """
    if models.n_features != data.n_features:
        raise ValueError(
            f"model dimensionality {models.n_features} does not match data "
            f"dimensionality {data.n_features}"
        )
    if loss_kind is None:
        loss_kind = default_loss_kind(data.task)
    if loss_kind == BINARY_CROSS_ENTROPY and data.task != BINARY_CLASSIFICATION:
        raise ValueError("binary-cross-entropy requires a binary-classification dataset")
    pred = models.predict(data.X)
    if not np.isfinite(pred).all():
        raise ValueError("degenerate model: non-finite prediction")
    return LossMatrix(pointwise_loss(pred, data.y, loss_kind), loss_kind)


@dataclass(frozen=True)
class ReductionConfig:
    """Hyperparameters of one reduction run."""

    method: str
    k: int
    epsilon: float | None = None
    min_coverage: float | None = None
    seed: int = 0
    p_norm: float = DEFAULT_P_NORM

    def __post_init__(self):
        if self.method not in REDUCTION_METHODS:
            raise ValueError(f"unknown reduction method {self.method!r}")
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.epsilon is not None and not self.epsilon > 0.0:
            raise ValueError("epsilon must be > 0")
        if self.min_coverage is not None and not (0.0 < self.min_coverage <= 1.0):
            raise ValueError("min_coverage must lie in (0, 1]")
        if not self.p_norm > 0.0:
            raise ValueError("p_norm must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "k": int(self.k),
            "epsilon": None if self.epsilon is None else float(self.epsilon),
            "min_coverage": None if self.min_coverage is None else float(self.min_coverage),
            "seed": int(self.seed),
            "p_norm": float(self.p_norm),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ReductionConfig":
        return cls(
            method=d["method"],
            k=int(d["k"]),
            epsilon=None if d.get("epsilon") is None else float(d["epsilon"]),
            min_coverage=None if d.get("min_coverage") is None else float(d["min_coverage"]),
            seed=int(d.get("seed", 0)),
            p_norm=float(d.get("p_norm", DEFAULT_P_NORM)),
        )


@dataclass(frozen=True)
class ProxySet:
    """Selected model indices plus provenance.

    ``achieved_coverage`` is filled in whenever an error tolerance was
    supplied; ``constraint_met`` only for the coverage-constrained method.
    """

    S: tuple[int, ...]
    config: ReductionConfig
    achieved_coverage: float | None = None
    constraint_met: bool | None = None

    def __post_init__(self):
        S = tuple(int(i) for i in self.S)
        if len(S) < 1:
            raise ValueError("a proxy set must contain at least one model")
        if len(set(S)) != len(S):
            raise ValueError("proxy indices must be distinct")
        if any(i < 0 for i in S):
            raise ValueError("proxy indices must be non-negative")
        object.__setattr__(self, "S", S)

    def indices(self) -> np.ndarray:
        return np.asarray(self.S, dtype=int)


@dataclass(frozen=True, eq=False)
class ItemModelMap:
    """Per-item proxy choice, stored as global model indices."""

    assignment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "assignment", _readonly(self.assignment, dtype=int))


def assign_items(loss, S) -> ItemModelMap:
    """Map every item to its minimal-loss model among ``S``.

    Ties break towards the lowest model index, which keeps the whole
    pipeline deterministic.
    """
    L = loss_array(loss)
    rows = np.unique(np.asarray(tuple(S), dtype=int))
    if rows.size == 0:
        raise ValueError("S must be non-empty")
    if rows[0] < 0 or rows[-1] >= L.shape[0]:
        raise ValueError("proxy index out of range")
    sub = L[rows]
    # argmin returns the first minimum; rows are sorted, so ties go to the
    # lowest model index.
    choice = sub.argmin(axis=0)
    return ItemModelMap(rows[choice])


def select_proxies(
    data: Dataset,
    models: LocalModelSet,
    config: ReductionConfig,
    loss_kind: str | None = None,
) -> tuple[ProxySet, ItemModelMap]:
    """Full reduction procedure on a fitted local model set.

    Builds the loss matrix, selects a proxy subset with the configured
    algorithm and maps every item to its lowest-loss proxy.  Deterministic
    given the config seed.
    """
    from . import reduce as _reduce

    if config.k > models.n_models:
        raise ValueError(f"k={config.k} exceeds the number of models m={models.n_models}")
    loss = build_loss_matrix(models, data, loss_kind)
    proxies, _ = _reduce.run_reduction(loss, config, models=models, data=data)
    mapping = assign_items(loss, proxies.S)
    return proxies, mapping


def nearest_items(queries, X, p_norm: float = DEFAULT_P_NORM, chunk: int = 64) -> np.ndarray:
    """Index of the nearest row of ``X`` for each query row.

    Distance is the p-norm; ties break towards the lowest item index.
    Chunked so the pairwise-difference tensor stays small.
    """
    queries = np.asarray(queries, dtype=float)
    X = np.asarray(X, dtype=float)
    if queries.ndim != 2 or queries.shape[1] != X.shape[1]:
        raise ValueError(f"queries must have shape (*, {X.shape[1]})")
    if not p_norm > 0.0:
        raise ValueError("p_norm must be > 0")
    out = np.empty(queries.shape[0], dtype=int)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        # The p-th root is monotone, so comparing sums of |diff|^p suffices.
        d = np.abs(q[:, None, :] - X[None, :, :]) ** p_norm
        out[start : start + chunk] = d.sum(axis=2).argmin(axis=1)
    return out


def map_new_item(x, data: Dataset, mapping: ItemModelMap, p_norm: float = DEFAULT_P_NORM) -> int:
    """Proxy for a novel covariate row: the proxy of its nearest training item."""
    x = np.asarray(x, dtype=float)
    if x.shape != (data.n_features,):
        raise ValueError(f"expected a vector of length {data.n_features}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("query contains non-finite values")
    j = nearest_items(x[None, :], data.X, p_norm)[0]
    return int(mapping.assignment[j])


def map_new_items(queries, data: Dataset, mapping: ItemModelMap, p_norm: float = DEFAULT_P_NORM) -> np.ndarray:
    """Vectorised :func:`map_new_item` over query rows."""
    nearest = nearest_items(queries, data.X, p_norm)
    return mapping.assignment[nearest]
