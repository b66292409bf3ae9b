import json

import pytest

from proxyset import serialize as io
from proxyset.cli import EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_USAGE, main


@pytest.fixture()
def workspace(tmp_path):
    rc = main([
        "generate", "--n", "160", "--features", "3", "--clusters", "3",
        "--sigma-e", "0.4", "--seed", "3", "--out", str(tmp_path),
    ])
    assert rc == EXIT_OK
    return tmp_path


def test_generate_writes_data_and_truth(workspace):
    data = io.read_dataset_csv(workspace / "data.csv")
    assert data.n_items == 160 and data.n_features == 3
    truth = json.loads((workspace / "truth.json").read_text())
    assert {"beta", "centroids", "cluster_id"} <= set(truth)


def test_generate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["generate", "--n", "50", "--features", "2", "--clusters", "2",
                     "--seed", "9", "--out", str(out)]) == EXIT_OK
    assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()
    assert (a / "truth.json").read_bytes() == (b / "truth.json").read_bytes()


def _explain(workspace, m="30", extra=()):
    args = [
        "explain", "--data", str(workspace / "data.csv"),
        "--predictor", "oracle", "--truth", str(workspace / "truth.json"),
        "--m", m, "--n-perturbations", "40", "--seed", "4",
        "--out", str(workspace / "models.json"),
        "--labeled-out", str(workspace / "labeled.csv"),
        "--bb-losses-out", str(workspace / "bb.csv"),
    ]
    return main(args + list(extra))


def test_full_pipeline(workspace):
    assert _explain(workspace) == EXIT_OK
    models = io.read_model_set(workspace / "models.json")
    assert models.n_models == 30

    rc = main([
        "reduce", "--models", str(workspace / "models.json"),
        "--data", str(workspace / "labeled.csv"),
        "--method", "greedy-max-coverage", "--k", "3",
        "--epsilon-percentile", "0.1", "--epsilon-source", "loss-matrix",
        "--out", str(workspace / "red"),
    ])
    assert rc == EXIT_OK
    proxies = io.read_proxy_set(workspace / "red" / "proxies.json")
    assert len(proxies.S) == 3
    assert (workspace / "red" / "trace.csv").exists()

    rc = main([
        "evaluate", "--models", str(workspace / "models.json"),
        "--proxies", str(workspace / "red" / "proxies.json"),
        "--data", str(workspace / "labeled.csv"),
        "--out", str(workspace / "metrics.json"),
    ])
    assert rc == EXIT_OK
    report = io.read_metrics(workspace / "metrics.json")
    assert report.test_fidelity is None
    assert report.coverage is not None


def test_reduce_closed_box_epsilon_source(workspace):
    assert _explain(workspace) == EXIT_OK
    rc = main([
        "reduce", "--models", str(workspace / "models.json"),
        "--data", str(workspace / "labeled.csv"),
        "--method", "const-min-loss", "--k", "3",
        "--bb-losses", str(workspace / "bb.csv"),
        "--out", str(workspace / "red2"),
    ])
    assert rc == EXIT_OK
    proxies = io.read_proxy_set(workspace / "red2" / "proxies.json")
    assert proxies.config.min_coverage == 0.8
    assert proxies.config.epsilon is not None


def test_reduce_closed_box_source_needs_losses(workspace):
    assert _explain(workspace) == EXIT_OK
    rc = main([
        "reduce", "--models", str(workspace / "models.json"),
        "--data", str(workspace / "labeled.csv"),
        "--method", "const-min-loss", "--k", "3",
        "--out", str(workspace / "red3"),
    ])
    assert rc == EXIT_USAGE


def test_reduce_k_at_least_m_warns_and_returns_full_set(workspace, capsys):
    assert _explain(workspace, m="10") == EXIT_OK
    rc = main([
        "reduce", "--models", str(workspace / "models.json"),
        "--data", str(workspace / "labeled.csv"),
        "--method", "greedy-min-loss", "--k", "99",
        "--out", str(workspace / "red4"),
    ])
    assert rc == EXIT_OK
    assert "full model set" in capsys.readouterr().err
    proxies = io.read_proxy_set(workspace / "red4" / "proxies.json")
    assert sorted(proxies.S) == list(range(10))


def test_exact_budget_exit_code(workspace):
    assert _explain(workspace, m="30") == EXIT_OK
    rc = main([
        "reduce", "--models", str(workspace / "models.json"),
        "--data", str(workspace / "labeled.csv"),
        "--method", "exact-min-loss", "--k", "7",
        "--out", str(workspace / "red5"),
    ])
    assert rc == EXIT_INFEASIBLE


def test_evaluate_with_empty_test_data(workspace, capsys):
    assert _explain(workspace) == EXIT_OK
    assert main([
        "reduce", "--models", str(workspace / "models.json"),
        "--data", str(workspace / "labeled.csv"),
        "--method", "greedy-min-loss", "--k", "2",
        "--out", str(workspace / "red6"),
    ]) == EXIT_OK
    empty = workspace / "empty.csv"
    empty.write_text("x0,x1,x2,target\n")
    rc = main([
        "evaluate", "--models", str(workspace / "models.json"),
        "--proxies", str(workspace / "red6" / "proxies.json"),
        "--data", str(workspace / "labeled.csv"),
        "--test-data", str(empty),
        "--out", str(workspace / "metrics.json"),
    ])
    assert rc == EXIT_OK
    assert "test" in capsys.readouterr().err
    assert io.read_metrics(workspace / "metrics.json").test_fidelity is None


def test_evaluate_round_trip_matches_in_memory(workspace):
    from proxyset.core import build_loss_matrix
    from proxyset.metrics import evaluate_proxies

    assert _explain(workspace) == EXIT_OK
    assert main([
        "reduce", "--models", str(workspace / "models.json"),
        "--data", str(workspace / "labeled.csv"),
        "--method", "greedy-max-coverage", "--k", "3",
        "--epsilon-percentile", "0.1", "--epsilon-source", "loss-matrix",
        "--out", str(workspace / "red7"),
    ]) == EXIT_OK
    assert main([
        "evaluate", "--models", str(workspace / "models.json"),
        "--proxies", str(workspace / "red7" / "proxies.json"),
        "--data", str(workspace / "labeled.csv"),
        "--out", str(workspace / "m.json"),
    ]) == EXIT_OK

    models = io.read_model_set(workspace / "models.json")
    proxies = io.read_proxy_set(workspace / "red7" / "proxies.json")
    train = io.read_dataset_csv(workspace / "labeled.csv")
    loss = build_loss_matrix(models, train)
    expected = evaluate_proxies(loss, proxies.S, models, train, epsilon=proxies.config.epsilon)
    got = io.read_metrics(workspace / "m.json")
    assert got.train_fidelity == pytest.approx(expected.train_fidelity, abs=1e-12)
    assert got.instability == pytest.approx(expected.instability, abs=1e-12)
    assert got.coverage == expected.coverage


def test_usage_errors_exit_one():
    assert main(["reduce"]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_missing_file_exits_three(tmp_path):
    rc = main([
        "reduce", "--models", str(tmp_path / "nope.json"),
        "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o"),
    ])
    assert rc == EXIT_IO


def test_infeasible_generation_exit_code(tmp_path):
    rc = main([
        "generate", "--n", "20", "--features", "1", "--clusters", "10",
        "--out", str(tmp_path / "g"),
    ])
    assert rc == EXIT_INFEASIBLE


def test_config_file_supplies_flags_and_flags_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 40, "features": 2, "clusters": 2, "seed": 5}))
    assert main(["generate", "--config", str(cfg), "--n", "60",
                 "--out", str(tmp_path / "g")]) == EXIT_OK
    data = io.read_dataset_csv(tmp_path / "g" / "data.csv")
    assert data.n_items == 60  # flag wins
    assert data.n_features == 2  # config supplies the rest


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not_a_flag": 1}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "g")]) == EXIT_USAGE


def test_experiment_cli_writes_sweep_and_figures(tmp_path):
    plan = {
        "axis": "k",
        "axis_values": [2, 3],
        "repetitions": 1,
        "synthetic": {"n_items": 100, "n_features": 3, "k_clusters": 3, "sigma_e": 0.5, "seed": 1},
        "subsample": 20,
        "methods": ["greedy-min-loss", "random"],
        "seed": 2,
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan))
    out = tmp_path / "exp"
    assert main(["experiment", "--plan", str(plan_path), "--out", str(out)]) == EXIT_OK
    assert (out / "sweep.csv").exists()
    assert (out / "test_fidelity_vs_k.png").exists()
    rows = io.read_sweep_csv(out / "sweep.csv")
    assert {r["method"] for r in rows} == {"greedy-min-loss", "random", "full-set"}

    out2 = tmp_path / "exp2"
    assert main(["experiment", "--plan", str(plan_path), "--out", str(out2),
                 "--no-figures"]) == EXIT_OK
    assert not (out2 / "test_fidelity_vs_k.png").exists()
    assert (out2 / "sweep.csv").read_bytes() == (out / "sweep.csv").read_bytes()
