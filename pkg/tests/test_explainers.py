import numpy as np
import pytest

from proxyset.core import BINARY_CLASSIFICATION, Dataset, LOGISTIC_REGRESSION
from proxyset.explainers import (
    DegenerateSamplingError,
    ExplainerConfig,
    Predictor,
    generate_explanations,
    knn_predictor,
    lime_explain,
    lime_objective,
    smoothgrad_explain,
)


def linear_predictor(slope, intercept):
    slope = np.asarray(slope, dtype=float)
    return Predictor(
        fn=lambda X: X @ slope + intercept, task="regression", n_features=slope.size
    )


def test_smoothgrad_recovers_linear_function():
    f = linear_predictor([3.0, -2.0], 1.0)
    cfg = ExplainerConfig(noise_sigma=0.7, n_perturbations=50, fd_step=1e-4, seed=5)
    x = np.array([0.3, -1.2])
    row = smoothgrad_explain(f, x, cfg)
    np.testing.assert_allclose(row[:2], [3.0, -2.0], atol=1e-6)
    assert row[:2] @ x + row[2] == pytest.approx(f(x[None])[0], abs=1e-6)


def test_smoothgrad_constant_function():
    f = Predictor(fn=lambda X: np.full(len(X), 4.2), task="regression", n_features=3)
    cfg = ExplainerConfig(n_perturbations=20, seed=0)
    row = smoothgrad_explain(f, np.zeros(3), cfg)
    np.testing.assert_allclose(row[:3], 0.0, atol=1e-9)
    assert row[3] == pytest.approx(4.2)


def test_smoothgrad_quadratic_matches_sampled_derivative_mean():
    # d/dx x^2 = 2x;  the slope must track the mean of 2x' over the same
    # perturbation sample, recomputed here from an identical RNG stream.
    f = Predictor(fn=lambda X: X[:, 0] ** 2, task="regression", n_features=1)
    cfg = ExplainerConfig(noise_sigma=0.1, n_perturbations=10_000, fd_step=1e-4, seed=77)
    x = np.array([1.0])
    row = smoothgrad_explain(f, x, cfg)
    rng = np.random.default_rng(77)
    samples = x + cfg.noise_sigma * rng.standard_normal((cfg.n_perturbations, 1))
    derivs = 2.0 * samples[:, 0]
    se = derivs.std() / np.sqrt(len(derivs))
    assert abs(row[0] - derivs.mean()) <= max(3 * se, 1e-7)


def test_lime_recovers_linear_function_without_ridge():
    f = linear_predictor([1.5, 0.5, -2.0], 0.25)
    cfg = ExplainerConfig(
        method="lime-lite", noise_sigma=0.5, n_perturbations=200, ridge_lambda=0.0, seed=3
    )
    row = lime_explain(f, np.array([0.1, 0.2, 0.3]), cfg)
    np.testing.assert_allclose(row, [1.5, 0.5, -2.0, 0.25], atol=1e-8)


def test_lime_huge_ridge_flattens_slope():
    f = linear_predictor([2.0], 0.0)
    cfg = ExplainerConfig(
        method="lime-lite", noise_sigma=0.4, n_perturbations=300, ridge_lambda=1e12, seed=4
    )
    x = np.array([1.0])
    row = lime_explain(f, x, cfg)
    assert abs(row[0]) < 1e-6
    rng = np.random.default_rng(4)
    samples = x + cfg.noise_sigma * rng.standard_normal((cfg.n_perturbations, 1))
    w = np.exp(-((samples - x) ** 2).sum(axis=1) / cfg.kernel_width**2)
    preds = f(samples)
    assert row[1] == pytest.approx((w * preds).sum() / w.sum(), rel=1e-6)


def test_lime_matches_independent_dense_solve():
    f = Predictor(
        fn=lambda X: X[:, 0] ** 2 - 0.5 * X[:, 1] ** 2 + X[:, 0] * X[:, 1],
        task="regression",
        n_features=2,
    )
    cfg = ExplainerConfig(method="lime-lite", noise_sigma=0.3, n_perturbations=500, seed=11)
    x = np.array([0.4, -0.7])
    row = lime_explain(f, x, cfg)
    rng = np.random.default_rng(11)
    samples = x + cfg.noise_sigma * rng.standard_normal((cfg.n_perturbations, 2))
    preds = f(samples)
    w = np.exp(-((samples - x) ** 2).sum(axis=1) / cfg.kernel_width**2)
    A = np.hstack([samples, np.ones((len(samples), 1))])
    # Independent route: sqrt-weighted least squares with the ridge rows
    # appended explicitly.
    Aw = A * np.sqrt(w)[:, None]
    yw = preds * np.sqrt(w)
    ridge = np.sqrt(cfg.ridge_lambda) * np.eye(3)[:2]
    phi, *_ = np.linalg.lstsq(np.vstack([Aw, ridge]), np.append(yw, [0.0, 0.0]), rcond=None)
    np.testing.assert_allclose(row, phi, rtol=1e-8, atol=1e-10)


def test_lime_local_optimality():
    f = Predictor(fn=lambda X: np.sin(X[:, 0]), task="regression", n_features=1)
    cfg = ExplainerConfig(method="lime-lite", noise_sigma=0.5, n_perturbations=100, seed=6)
    x = np.array([0.8])
    row = lime_explain(f, x, cfg)
    rng = np.random.default_rng(6)
    samples = x + cfg.noise_sigma * rng.standard_normal((cfg.n_perturbations, 1))
    preds = f(samples)
    base = lime_objective(preds, samples, x, row, cfg)
    delta_rng = np.random.default_rng(99)
    for _ in range(25):
        delta = 1e-4 * delta_rng.standard_normal(2)
        assert base <= lime_objective(preds, samples, x, row + delta, cfg) + 1e-12


def test_lime_singular_without_ridge_raises():
    f = linear_predictor([1.0, 1.0, 1.0], 0.0)
    cfg = ExplainerConfig(method="lime-lite", n_perturbations=2, ridge_lambda=0.0, seed=1)
    with pytest.raises(DegenerateSamplingError, match="ridge_lambda"):
        lime_explain(f, np.zeros(3), cfg)


@pytest.mark.parametrize("method", ["smoothgrad", "lime-lite"])
def test_affine_recovery_any_sigma_and_seed(method):
    rng = np.random.default_rng(13)
    for seed in (0, 9):
        for sigma in (0.05, 1.5):
            slope = rng.standard_normal(3)
            f = linear_predictor(slope, -0.4)
            cfg = ExplainerConfig(
                method=method, noise_sigma=sigma, n_perturbations=60,
                ridge_lambda=0.0, seed=seed,
            )
            x = rng.standard_normal(3)
            fit = smoothgrad_explain if method == "smoothgrad" else lime_explain
            row = fit(f, x, cfg)
            np.testing.assert_allclose(row[:3], slope, atol=1e-6)


def test_predictor_validates_output():
    bad = Predictor(fn=lambda X: np.full(len(X), np.nan), task="regression", n_features=1)
    with pytest.raises(ValueError, match="non-finite"):
        bad(np.zeros((2, 1)))
    out_of_range = Predictor(fn=lambda X: np.full(len(X), 1.5), task=BINARY_CLASSIFICATION, n_features=1)
    with pytest.raises(ValueError, match="probabilities"):
        out_of_range(np.zeros((2, 1)))


def _dataset(n=40, M=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, M))
    return Dataset(X, X @ np.array([1.0, -1.0]) + 0.3)


def test_generate_explanations_full_sample_anchors_in_order():
    data = _dataset()
    f = linear_predictor([1.0, -1.0], 0.3)
    models, anchors = generate_explanations(f, data, data.n_items, ExplainerConfig(seed=2))
    assert anchors.tolist() == list(range(data.n_items))
    assert models.n_models == data.n_items
    assert models.origin.tolist() == anchors.tolist()


def test_generate_explanations_single_model():
    data = _dataset()
    f = linear_predictor([1.0, -1.0], 0.3)
    models, anchors = generate_explanations(f, data, 1, ExplainerConfig(seed=2))
    assert models.n_models == 1 and len(anchors) == 1


def test_generate_explanations_seeded_determinism():
    data = _dataset(seed=5)
    f = linear_predictor([1.0, -1.0], 0.3)
    cfg = ExplainerConfig(method="lime-lite", seed=8, n_perturbations=40)
    a, _ = generate_explanations(f, data, 10, cfg)
    b, _ = generate_explanations(f, data, 10, cfg)
    assert a.B.tobytes() == b.B.tobytes()


def test_generate_explanations_default_subsample_count():
    rng = np.random.default_rng(17)
    X = rng.standard_normal((5000, 2))
    data = Dataset(X, X[:, 0])
    f = linear_predictor([1.0, 0.0], 0.0)
    cfg = ExplainerConfig(n_perturbations=2, seed=1)
    models, anchors = generate_explanations(f, data, 500, cfg)
    assert models.n_models == 500
    assert len(np.unique(anchors)) == 500


def test_generate_explanations_classification_stays_in_unit_interval():
    rng = np.random.default_rng(19)
    X = rng.standard_normal((30, 2))
    p = 1.0 / (1.0 + np.exp(-(X[:, 0] - X[:, 1])))
    data = Dataset(X, p, task=BINARY_CLASSIFICATION)
    f = Predictor(
        fn=lambda Q: 1.0 / (1.0 + np.exp(-(Q[:, 0] - Q[:, 1]))),
        task=BINARY_CLASSIFICATION,
        n_features=2,
    )
    models, _ = generate_explanations(f, data, 5, ExplainerConfig(n_perturbations=30, seed=3))
    assert models.kind == LOGISTIC_REGRESSION
    pred = models.predict(X)
    assert ((pred > 0.0) & (pred < 1.0)).all()
    # The logit of this predictor is exactly linear, so each local model
    # reproduces it.
    np.testing.assert_allclose(pred, np.tile(p, (5, 1)), atol=1e-5)


def test_knn_predictor_is_pure_and_interpolates():
    data = _dataset(n=25, seed=23)
    f = knn_predictor(data, n_neighbors=3)
    out1 = f(data.X[:5])
    out2 = f(data.X[:5])
    np.testing.assert_array_equal(out1, out2)
    g = knn_predictor(data, n_neighbors=1)
    np.testing.assert_allclose(g(data.X), data.y)
