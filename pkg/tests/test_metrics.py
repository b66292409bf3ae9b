import numpy as np
import pytest

from proxyset.core import (
    Dataset,
    LINEAR_REGRESSION,
    LocalModelSet,
    assign_items,
    build_loss_matrix,
)
from proxyset.metrics import test_fidelity as heldout_fidelity
from proxyset.metrics import (
    DEFAULT_EPSILON_PERCENTILE,
    DEFAULT_KAPPA,
    DEFAULT_MIN_COVERAGE,
    approximation_ratio,
    coverage,
    epsilon_from_quantile,
    evaluate_proxies,
    instability,
    k_nearest_neighbors,
    train_fidelity,
)

L3X4 = np.array(
    [
        [0.1, 0.9, 0.9, 0.1],
        [0.9, 0.1, 0.9, 0.9],
        [0.9, 0.9, 0.1, 0.9],
    ]
)


def test_coverage_fixture_values():
    assert coverage(L3X4, (0, 1, 2), 0.2) == 1.0
    assert coverage(L3X4, (0,), 0.2) == 0.5
    assert coverage(L3X4, (1,), L3X4.max()) == 1.0


def test_coverage_monotone_under_additions():
    rng = np.random.default_rng(1)
    for _ in range(50):
        L = rng.uniform(size=(6, 10))
        S = list(rng.choice(6, size=rng.integers(1, 6), replace=False))
        extra = int(rng.integers(0, 6))
        bigger = set(S) | {extra}
        assert coverage(L, tuple(bigger), 0.4) >= coverage(L, tuple(S), 0.4)


def test_train_fidelity_fixture():
    # S = {0, 1}: per-item minima are [0.1, 0.1, 0.9, 0.1].
    assert train_fidelity(L3X4, (0, 1)) == pytest.approx(0.3)


def test_full_set_train_fidelity_is_mean_column_min():
    rng = np.random.default_rng(2)
    L = rng.uniform(size=(7, 13))
    assert train_fidelity(L, tuple(range(7))) == pytest.approx(L.min(axis=0).mean(), abs=1e-15)


def test_single_model_fidelity_is_its_mse():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((15, 2))
    y = rng.standard_normal(15)
    models = LocalModelSet(LINEAR_REGRESSION, [[0.5, -1.0, 0.2]])
    data = Dataset(X, y)
    loss = build_loss_matrix(models, data)
    pred = models.predict(X)[0]
    assert train_fidelity(loss, (0,)) == pytest.approx(((pred - y) ** 2).mean())


def test_perfect_models_give_zero_fidelity():
    X = np.array([[0.0], [1.0], [2.0]])
    y = 3.0 * X[:, 0] + 1.0
    models = LocalModelSet(LINEAR_REGRESSION, [[3.0, 1.0]])
    data = Dataset(X, y)
    loss = build_loss_matrix(models, data)
    assert train_fidelity(loss, (0,)) == 0.0
    mapping = assign_items(loss, (0,))
    assert heldout_fidelity(models, data, data, mapping) == 0.0


def test_test_fidelity_uses_nearest_training_item():
    train = Dataset([[0.0], [10.0]], [0.0, 10.0])
    test = Dataset([[1.0]], [2.0])
    # Model 0 predicts 0 everywhere, model 1 predicts 10 everywhere.
    models = LocalModelSet(LINEAR_REGRESSION, [[0.0, 0.0], [0.0, 10.0]])
    loss = build_loss_matrix(models, train)
    mapping = assign_items(loss, (0, 1))
    # The test item is nearest to training item 0 whose proxy is model 0.
    assert heldout_fidelity(models, train, test, mapping) == pytest.approx(4.0)


def _perfect_cross_pair():
    # Two items; each mapped model fits its own item exactly and misses the
    # other by a squared error of 0.4.
    d = np.sqrt(0.4)
    X = np.array([[0.0], [1.0]])
    y = np.array([0.0, 1.0])
    B = np.array([[1.0 + d, 0.0], [1.0 - d, d]])
    return Dataset(X, y), LocalModelSet(LINEAR_REGRESSION, B)


def test_instability_two_item_cross_loss():
    data, models = _perfect_cross_pair()
    loss = build_loss_matrix(models, data)
    assert loss.L[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert loss.L[1, 1] == pytest.approx(0.0, abs=1e-15)
    mapping = assign_items(loss, (0, 1))
    assert mapping.assignment.tolist() == [0, 1]
    assert instability(data, models, mapping, kappa=1) == pytest.approx(0.4)


def test_instability_zero_for_perfect_global_model():
    X = np.linspace(0, 1, 10)[:, None]
    y = 2.0 * X[:, 0] - 0.5
    models = LocalModelSet(LINEAR_REGRESSION, [[2.0, -0.5]])
    data = Dataset(X, y)
    mapping = assign_items(build_loss_matrix(models, data), (0,))
    assert instability(data, models, mapping, kappa=3) == 0.0


def test_instability_permutation_invariant():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    models = LocalModelSet(LINEAR_REGRESSION, rng.standard_normal((4, 3)))
    data = Dataset(X, y)
    loss = build_loss_matrix(models, data)
    mapping = assign_items(loss, (0, 1, 2, 3))
    base = instability(data, models, mapping, kappa=5)
    perm = rng.permutation(30)
    pdata = Dataset(X[perm], y[perm])
    ploss = build_loss_matrix(models, pdata)
    pmapping = assign_items(ploss, (0, 1, 2, 3))
    assert instability(pdata, models, pmapping, kappa=5) == pytest.approx(base, rel=1e-12)


def test_instability_kappa_all_equals_ordered_pair_mean():
    rng = np.random.default_rng(6)
    n = 12
    X = rng.standard_normal((n, 2))
    y = rng.standard_normal(n)
    models = LocalModelSet(LINEAR_REGRESSION, rng.standard_normal((3, 3)))
    data = Dataset(X, y)
    loss = build_loss_matrix(models, data)
    mapping = assign_items(loss, (0, 1, 2))
    got = instability(data, models, mapping, kappa=n - 1)
    pred = models.predict(X)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += (pred[mapping.assignment[i], j] - y[j]) ** 2
    assert got == pytest.approx(total / (n * (n - 1)))


def test_k_nearest_neighbors_excludes_self_and_breaks_ties_low():
    X = np.array([[0.0], [0.0], [5.0]])
    nn = k_nearest_neighbors(X, 1)
    assert nn[0, 0] == 1  # not itself
    assert nn[1, 0] == 0
    assert nn[2, 0] == 0  # items 0 and 1 tie; lowest index


def test_epsilon_from_quantile_nearest_rank():
    losses = np.arange(1.0, 11.0)
    assert epsilon_from_quantile(losses, 0.2) == 2.0
    assert epsilon_from_quantile(losses, 0.999) == 10.0
    assert epsilon_from_quantile(losses, 0.05) == 1.0


def test_epsilon_from_quantile_monotone_in_p():
    rng = np.random.default_rng(7)
    losses = rng.uniform(size=200)
    ps = np.linspace(0.05, 0.95, 19)
    vals = [epsilon_from_quantile(losses, p) for p in ps]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_epsilon_from_quantile_rejects_zero():
    with pytest.raises(ValueError, match="supply epsilon"):
        epsilon_from_quantile(np.zeros(10), 0.2)


def test_default_hyperparameters_match_contract():
    assert DEFAULT_KAPPA == 5
    assert DEFAULT_EPSILON_PERCENTILE == 0.2
    assert DEFAULT_MIN_COVERAGE == 0.8


def test_approximation_ratio():
    assert approximation_ratio(0.75, 0.75) == 1.0
    assert approximation_ratio(0.6, 0.8) == pytest.approx(0.75)
    assert approximation_ratio(1.0, 0.0) is None


def test_evaluate_proxies_bundles_fields():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((25, 2))
    data = Dataset(X, rng.standard_normal(25))
    models = LocalModelSet(LINEAR_REGRESSION, rng.standard_normal((5, 3)))
    loss = build_loss_matrix(models, data)
    report = evaluate_proxies(loss, (0, 2), models, data, data, epsilon=0.5)
    assert 0.0 <= report.coverage <= 1.0
    assert report.train_fidelity == pytest.approx(train_fidelity(loss, (0, 2)))
    assert report.test_fidelity is not None
    assert report.kappa == DEFAULT_KAPPA
    doc = report.to_json_dict()
    assert set(doc) == {"coverage", "train_fidelity", "test_fidelity", "instability", "epsilon", "kappa"}
    row = report.to_csv_row()
    assert len(row) == len(report.CSV_FIELDS)
    assert row[1] == report.train_fidelity
