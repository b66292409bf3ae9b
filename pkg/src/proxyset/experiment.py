"""Experiment harness: sweeps over proxy-set size, explanation subsample
size, or the tolerance/coverage grid, averaging repeated runs into one
flat table.

Every (axis value, repetition) cell owns RNG streams derived from the
master seed and the cell coordinates, so results are independent of any
execution schedule and reruns are byte-identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics as mt
from . import reduce as rd
from .core import Dataset, ReductionConfig, build_loss_matrix, nearest_items, pointwise_loss
from .explainers import (
    DEFAULT_SUBSAMPLE,
    ExplainerConfig,
    Predictor,
    generate_explanations,
    knn_predictor,
)
from .serialize import read_dataset_csv, write_sweep_csv
from .synth import SyntheticSpec, generate_synthetic, oracle_predictor

AXES = ("k", "subsample", "epsilon-coverage")

SWEEP_METHODS = (
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

FULL_SET = "full-set"


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything one sweep needs; JSON-friendly."""

    axis: str = "k"
    axis_values: tuple = (1, 2, 3, 5, 10, 20)
    epsilon_percentiles: tuple = (0.1, 0.2, 0.3, 0.5)
    min_coverages: tuple = (0.5, 0.8, 0.95)
    methods: tuple = SWEEP_METHODS
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    csv_path: str | None = None
    csv_target: str = "target"
    task: str = "regression"
    predictor: str = "oracle"
    knn_neighbors: int = 5
    explainer: ExplainerConfig = field(default_factory=ExplainerConfig)
    k: int = 5
    subsample: int = DEFAULT_SUBSAMPLE
    epsilon_percentile: float = mt.DEFAULT_EPSILON_PERCENTILE
    epsilon_source: str = "closed-box"
    min_coverage: float = mt.DEFAULT_MIN_COVERAGE
    kappa: int = mt.DEFAULT_KAPPA
    p_norm: float = 2.0
    repetitions: int = 5
    train_fraction: float = 0.7
    seed: int = 0
    compute_ratios: bool = True

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.predictor not in ("oracle", "knn"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.epsilon_source not in mt.EPSILON_SOURCES:
            raise ValueError(f"unknown epsilon source {self.epsilon_source!r}")
        unknown = set(self.methods) - set(SWEEP_METHODS)
        if unknown:
            raise ValueError(f"unknown methods in plan: {sorted(unknown)}")
        if self.axis in ("k", "subsample"):
            _check_increasing(self.axis_values, "axis_values")
        else:
            _check_increasing(self.epsilon_percentiles, "epsilon_percentiles")
            _check_increasing(self.min_coverages, "min_coverages")
        if self.synthetic is None and self.csv_path is None:
            raise ValueError("plan needs a synthetic spec or a csv_path")
        if self.predictor == "oracle" and self.synthetic is None:
            raise ValueError("the oracle predictor requires a synthetic dataset")

    def cells(self) -> list[tuple[int, object]]:
        """Enumerated axis values; grid cells are (percentile, coverage) pairs."""
        if self.axis == "epsilon-coverage":
            values = [(p, c) for p in self.epsilon_percentiles for c in self.min_coverages]
        else:
            values = list(self.axis_values)
        return list(enumerate(values))

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        if "synthetic" in d and d["synthetic"] is not None:
            d["synthetic"] = SyntheticSpec(**d["synthetic"])
        if "explainer" in d:
            d["explainer"] = ExplainerConfig(**d["explainer"])
        for key in ("axis_values", "epsilon_percentiles", "min_coverages", "methods"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _check_increasing(values, name):
    values = tuple(values)
    if len(values) < 1:
        raise ValueError(f"{name} must be non-empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} must be strictly increasing")


def _cell_seeds(plan: ExperimentPlan, axis_index: int, rep: int) -> np.ndarray:
    rng = np.random.default_rng([plan.seed, axis_index, rep])
    return rng.integers(0, 2**62, size=4)


def _make_dataset(plan: ExperimentPlan, seed: int):
    if plan.synthetic is not None:
        spec = replace(plan.synthetic, seed=int(seed))
        data, truth = generate_synthetic(spec)
        return data, truth
    data = read_dataset_csv(plan.csv_path, target=plan.csv_target, task=plan.task)
    return data, None


def _split(data: Dataset, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n_items)
    n_train = int(round(fraction * data.n_items))
    n_train = min(max(n_train, 1), data.n_items - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _predictor(plan: ExperimentPlan, truth, train: Dataset) -> Predictor:
    if plan.predictor == "oracle":
        return oracle_predictor(truth)
    return knn_predictor(train, n_neighbors=plan.knn_neighbors)


def run_cell(plan: ExperimentPlan, axis_index: int, axis_value, rep: int) -> list[dict]:
    """Run explain -> reduce -> evaluate for one sweep cell."""
    k = plan.k
    m = plan.subsample
    eps_p = plan.epsilon_percentile
    min_cov = plan.min_coverage
    if plan.axis == "k":
        k = int(axis_value)
    elif plan.axis == "subsample":
        m = int(axis_value)
    else:
        eps_p, min_cov = float(axis_value[0]), float(axis_value[1])

    data_seed, split_seed, explain_seed, reduce_seed = (int(s) for s in _cell_seeds(plan, axis_index, rep))
    data, truth = _make_dataset(plan, data_seed)
    train_idx, test_idx = _split(data, plan.train_fraction, split_seed)
    train_true = data.subset(train_idx)
    test_true = data.subset(test_idx)

    f = _predictor(plan, truth, train_true)
    train = train_true.with_labels(f(train_true.X))
    test = test_true.with_labels(f(test_true.X))

    m = min(m, train.n_items)
    k = min(k, m)
    explainer = replace(plan.explainer, seed=explain_seed)
    models, _ = generate_explanations(f, train, m, explainer)
    loss = build_loss_matrix(models, train)
    loss_kind = loss.loss_kind

    if plan.epsilon_source == "closed-box":
        bb = pointwise_loss(train.y, train_true.y, loss_kind)
        epsilon = mt.epsilon_from_quantile(bb, eps_p)
    else:
        epsilon = mt.epsilon_from_quantile(loss.L, eps_p)

    neighbors = mt.k_nearest_neighbors(train.X, plan.kappa)
    nearest = nearest_items(test.X, train.X, plan.p_norm)

    axis_label = (
        f"{eps_p:g}|{min_cov:g}" if plan.axis == "epsilon-coverage" else axis_value
    )
    base = {
        "axis": plan.axis,
        "axis_value": axis_label,
        "repetition": rep,
        "n_train": train.n_items,
        "n_test": test.n_items,
        "m_models": m,
        "k": k,
        "epsilon": epsilon,
        "epsilon_percentile": eps_p,
        "epsilon_source": plan.epsilon_source,
        "min_coverage": min_cov,
        "kappa": plan.kappa,
        "p_norm": plan.p_norm,
        "seed": plan.seed,
    }

    ratios: dict[str, dict] = {}
    if plan.compute_ratios and m <= rd.DEFAULT_MAX_EXACT_MODELS and k <= rd.DEFAULT_MAX_EXACT_K:
        try:
            greedy_cov, _ = rd.greedy_max_coverage(loss, epsilon, k)
            exact_cov = rd.exact_max_coverage(loss, epsilon, k)
            greedy_obj, _ = rd.greedy_min_loss(loss, k)
            exact_obj = rd.exact_min_loss(loss, k)
        except rd.ExactBudgetError:
            pass  # ratio cells stay empty when the search hits its budget
        else:
            ratios["greedy-max-coverage"] = {
                "coverage_ratio": mt.approximation_ratio(
                    greedy_cov.achieved_coverage, exact_cov.achieved_coverage
                )
            }
            ratios["greedy-min-loss"] = {
                "loss_ratio": mt.approximation_ratio(
                    mt.train_fidelity(loss, greedy_obj.S), mt.train_fidelity(loss, exact_obj.S)
                )
            }

    rows = []
    for method in list(plan.methods) + [FULL_SET]:
        if method == FULL_SET:
            S = tuple(range(m))
            constraint_met = None
        else:
            config = ReductionConfig(
                method=method,
                k=k,
                epsilon=epsilon,
                min_coverage=min_cov if method == "const-min-loss" else None,
                seed=reduce_seed,
                p_norm=plan.p_norm,
            )
            try:
                proxies, _ = rd.run_reduction(loss, config, models=models, data=train)
            except rd.ExactBudgetError:
                continue  # exact methods silently skipped beyond their budget
            S = proxies.S
            constraint_met = proxies.constraint_met
        report = mt.evaluate_proxies(
            loss, S, models, train, test,
            epsilon=epsilon, kappa=plan.kappa, p_norm=plan.p_norm,
            loss_kind=loss_kind, neighbors=neighbors, nearest=nearest,
        )
        row = dict(base)
        row.update(
            method=method,
            coverage=report.coverage,
            train_fidelity=report.train_fidelity,
            test_fidelity=report.test_fidelity,
            instability=report.instability,
            constraint_met=constraint_met,
            coverage_ratio=None,
            loss_ratio=None,
        )
        row.update(ratios.get(method, {}))
        rows.append(row)
    return rows


def run_experiment(plan: ExperimentPlan, workers: int = 1) -> list[dict]:
    """All sweep cells, flattened into rows in a schedule-independent order."""
    cells = [(i, v, r) for i, v in plan.cells() for r in range(plan.repetitions)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda c: run_cell(plan, *c), cells))
    else:
        chunks = [run_cell(plan, *c) for c in cells]
    # pool.map preserves cell order, so the row order is schedule-independent.
    return [row for chunk in chunks for row in chunk]


def write_sweep(path, rows: list[dict]):
    write_sweep_csv(Path(path), rows)
