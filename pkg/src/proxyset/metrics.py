"""Quality measures for proxy sets: coverage, train/test fidelity,
instability, tolerance selection, and greedy-vs-exact ratios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_P_NORM,
    Dataset,
    ItemModelMap,
    LocalModelSet,
    assign_items,
    default_loss_kind,
    loss_array,
    nearest_items,
    pointwise_loss,
)

DEFAULT_KAPPA = 5
DEFAULT_EPSILON_PERCENTILE = 0.2
DEFAULT_MIN_COVERAGE = 0.8

EPSILON_SOURCES = ("loss-matrix", "closed-box")


@dataclass(frozen=True)
class MetricReport:
    """One proxy set's scores on one dataset split."""

    coverage: float | None
    train_fidelity: float
    test_fidelity: float | None
    instability: float
    epsilon: float | None
    kappa: int

    def __post_init__(self):
        for name in ("coverage", "train_fidelity", "test_fidelity", "instability"):
            v = getattr(self, name)
            if v is not None and not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.coverage is not None and not (0.0 <= self.coverage <= 1.0):
            raise ValueError("coverage must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "train_fidelity": self.train_fidelity,
            "test_fidelity": self.test_fidelity,
            "instability": self.instability,
            "epsilon": self.epsilon,
            "kappa": self.kappa,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricReport":
        return cls(
            coverage=d.get("coverage"),
            train_fidelity=d["train_fidelity"],
            test_fidelity=d.get("test_fidelity"),
            instability=d["instability"],
            epsilon=d.get("epsilon"),
            kappa=int(d.get("kappa", DEFAULT_KAPPA)),
        )

    CSV_FIELDS = ("coverage", "train_fidelity", "test_fidelity", "instability", "epsilon", "kappa")

    def to_csv_row(self) -> list:
        """Flat row (CSV_FIELDS order) for sweep aggregation."""
        return [getattr(self, f) for f in self.CSV_FIELDS]


def coverage(loss, S, epsilon: float) -> float:
    """Fraction of items whose best model in S has loss <= epsilon."""
    L = loss_array(loss)
    rows = np.asarray(tuple(S), dtype=int)
    if rows.size == 0:
        raise ValueError("S must be non-empty")
    if not epsilon > 0.0:
        raise ValueError("epsilon must be > 0")
    return float((L[rows].min(axis=0) <= epsilon).mean())


def train_fidelity(loss, S) -> float:
    """Mean loss under the loss-minimising item-to-proxy mapping.

    Equals the mean of column minima of L restricted to the rows in S.
    """
    L = loss_array(loss)
    rows = np.asarray(tuple(S), dtype=int)
    if rows.size == 0:
        raise ValueError("S must be non-empty")
    return float(L[rows].min(axis=0).mean())


def test_fidelity(
    models: LocalModelSet,
    train_data: Dataset,
    test_data: Dataset,
    mapping: ItemModelMap,
    loss_kind: str | None = None,
    p_norm: float = DEFAULT_P_NORM,
    nearest: np.ndarray | None = None,
) -> float:
    """Mean loss on held-out items mapped through the data-space rule.

    Each test item borrows the proxy of its nearest training item (p-norm
    distance, lowest index on ties).  ``nearest`` may carry precomputed
    nearest-training-item indices when evaluating many proxy sets against
    one split.
    """
    if loss_kind is None:
        loss_kind = default_loss_kind(test_data.task)
    if nearest is None:
        nearest = nearest_items(test_data.X, train_data.X, p_norm)
    assigned = mapping.assignment[nearest]
    used, inverse = np.unique(assigned, return_inverse=True)
    pred = models.predict(test_data.X, rows=used)
    losses = pointwise_loss(pred, test_data.y, loss_kind)
    per_item = losses[inverse, np.arange(test_data.n_items)]
    return float(per_item.mean())


def k_nearest_neighbors(X, kappa: int) -> np.ndarray:
    """Indices of each row's kappa nearest other rows (Euclidean).

    Self is excluded; distance ties break towards the lowest item index.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 0 < kappa < n:
        raise ValueError(f"kappa must lie in [1, {n - 1}], got {kappa}")
    out = np.empty((n, kappa), dtype=int)
    chunk = max(1, int(2**22 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = ((X[start:stop, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        out[start:stop] = order[:, :kappa]
    return out


def instability(
    data: Dataset,
    models: LocalModelSet,
    mapping: ItemModelMap,
    kappa: int = DEFAULT_KAPPA,
    loss_kind: str | None = None,
    neighbors: np.ndarray | None = None,
) -> float:
    """How badly each item's model travels to that item's neighbourhood.

    For every item, the loss of its assigned model is averaged over the
    item's kappa nearest neighbours (evaluated against the neighbours'
    labels), then averaged over items.  Lower means explanations vary
    smoothly across the data space.
    """
    if loss_kind is None:
        loss_kind = default_loss_kind(data.task)
    if neighbors is None:
        neighbors = k_nearest_neighbors(data.X, kappa)
    elif neighbors.shape != (data.n_items, kappa):
        raise ValueError("precomputed neighbors have the wrong shape")
    used, inverse = np.unique(mapping.assignment, return_inverse=True)
    pred = models.predict(data.X, rows=used)
    losses = pointwise_loss(pred, data.y, loss_kind)  # (unique models, n)
    per_item = losses[inverse[:, None], neighbors].mean(axis=1)
    return float(per_item.mean())


def epsilon_from_quantile(losses, p: float) -> float:
    """Nearest-rank (lower) percentile of a loss sample, used as tolerance.

    Sorted ascending, returns the value at index ceil(p * n) - 1.  A zero
    result is rejected because a tolerance must be strictly positive.
    """
    losses = np.asarray(losses, dtype=float).ravel()
    if losses.size == 0:
        raise ValueError("losses must be non-empty")
    if (losses < 0.0).any() or not np.isfinite(losses).all():
        raise ValueError("losses must be finite and non-negative")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    ordered = np.sort(losses)
    idx = int(np.ceil(p * ordered.size)) - 1
    eps = float(ordered[idx])
    if eps <= 0.0:
        raise ValueError(
            "the requested quantile of the losses is 0, which is not a valid "
            "tolerance; supply epsilon directly"
        )
    return eps


def approximation_ratio(greedy_value: float, exact_value: float) -> float | None:
    """greedy/exact for both senses; <= 1 for coverage, >= 1 for loss.

    Returns None when the exact value is zero (the ratio is undefined and
    reported as absent).
    """
    if exact_value == 0.0:
        return None
    return float(greedy_value) / float(exact_value)


def evaluate_proxies(
    loss,
    S,
    models: LocalModelSet,
    train_data: Dataset,
    test_data: Dataset | None = None,
    epsilon: float | None = None,
    kappa: int = DEFAULT_KAPPA,
    p_norm: float = DEFAULT_P_NORM,
    loss_kind: str | None = None,
    neighbors: np.ndarray | None = None,
    nearest: np.ndarray | None = None,
) -> MetricReport:
    """Bundle all metrics for one proxy set into a report.

    ``test_data`` is optional; without it the test-fidelity field is
    absent.  ``neighbors``/``nearest`` are optional caches shared across
    proxy sets on the same split.
    """
    L = loss_array(loss)
    mapping = assign_items(L, S)
    cov = None if epsilon is None else coverage(L, S, epsilon)
    fid_train = train_fidelity(L, S)
    fid_test = None
    if test_data is not None:
        fid_test = test_fidelity(
            models, train_data, test_data, mapping,
            loss_kind=loss_kind, p_norm=p_norm, nearest=nearest,
        )
    instab = instability(
        train_data, models, mapping, kappa=kappa, loss_kind=loss_kind, neighbors=neighbors
    )
    return MetricReport(
        coverage=cov,
        train_fidelity=fid_train,
        test_fidelity=fid_test,
        instability=instab,
        epsilon=epsilon,
        kappa=kappa,
    )
