"""Command-line front end: generate | explain | reduce | evaluate | experiment.

Any flag may also come from a JSON config file (--config); explicit flags
win.  Exit codes: 0 success, 1 usage, 2 infeasible/budget, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics as mt
from . import reduce as rd
from . import serialize as io
from .core import REDUCTION_METHODS, ReductionConfig, build_loss_matrix, pointwise_loss
from .experiment import ExperimentPlan, run_experiment
from .explainers import ExplainerConfig, generate_explanations, knn_predictor
from .synth import GenerationError, SyntheticSpec, generate_synthetic, oracle_predictor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _warn(message: str):
    print(f"warning: {message}", file=sys.stderr)


def _build_parser() -> _Parser:
    parser = _Parser(prog="proxyset", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file supplying any flag; explicit flags override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output file or directory")

    g = sub.add_parser("generate", help="write a synthetic dataset and its ground truth")
    add_common(g)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--features", type=int, default=11)
    g.add_argument("--clusters", type=int, default=5)
    g.add_argument("--spread", type=float, default=1.0)
    g.add_argument("--sigma-e", type=float, default=2.0)
    g.add_argument("--target", default=io.DEFAULT_TARGET_COLUMN)

    e = sub.add_parser("explain", help="fit local explanations against a predictor")
    add_common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--target", default=io.DEFAULT_TARGET_COLUMN)
    e.add_argument("--task", choices=("regression", "binary-classification"), default="regression")
    e.add_argument("--predictor", choices=("oracle", "knn"), default="oracle")
    e.add_argument("--truth", help="ground-truth JSON (oracle predictor)")
    e.add_argument("--knn-neighbors", type=int, default=5)
    e.add_argument("--explainer", choices=("smoothgrad", "lime-lite", "ingest"), default="smoothgrad")
    e.add_argument("--models-in", help="model-set JSON to ingest")
    e.add_argument("--m", type=int, default=500, help="number of anchors to explain")
    e.add_argument("--noise-sigma", type=float, default=0.3)
    e.add_argument("--n-perturbations", type=int, default=100)
    e.add_argument("--kernel-width", type=float, default=1.0)
    e.add_argument("--ridge-lambda", type=float, default=1e-3)
    e.add_argument("--fd-step", type=float, default=1e-4)
    e.add_argument("--labeled-out", help="also write the data with predictor labels")
    e.add_argument("--bb-losses-out", help="also write the predictor's losses vs. the original labels")

    r = sub.add_parser("reduce", help="select a proxy subset from a model set")
    add_common(r)
    r.add_argument("--models", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--target", default=io.DEFAULT_TARGET_COLUMN)
    r.add_argument("--task", choices=("regression", "binary-classification"), default="regression")
    r.add_argument("--method", choices=REDUCTION_METHODS, default="const-min-loss")
    r.add_argument("--k", type=int, default=5)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--epsilon-percentile", type=float, default=mt.DEFAULT_EPSILON_PERCENTILE)
    r.add_argument("--epsilon-source", choices=mt.EPSILON_SOURCES, default="closed-box")
    r.add_argument("--bb-losses", help="closed-box loss CSV (epsilon source 'closed-box')")
    r.add_argument("--min-coverage", type=float, default=mt.DEFAULT_MIN_COVERAGE)

    v = sub.add_parser("evaluate", help="score a proxy set on train (and test) data")
    add_common(v)
    v.add_argument("--models", required=True)
    v.add_argument("--proxies", required=True)
    v.add_argument("--data", required=True, help="training-split CSV (labels to score against)")
    v.add_argument("--test-data")
    v.add_argument("--target", default=io.DEFAULT_TARGET_COLUMN)
    v.add_argument("--task", choices=("regression", "binary-classification"), default="regression")
    v.add_argument("--kappa", type=int, default=mt.DEFAULT_KAPPA)
    v.add_argument("--p-norm", type=float, default=2.0)

    x = sub.add_parser("experiment", help="run a sweep and write its table and figures")
    add_common(x)
    x.add_argument("--plan", help="experiment plan JSON")
    x.add_argument("--axis", choices=("k", "subsample", "epsilon-coverage"))
    x.add_argument("--axis-values", help="comma-separated axis values")
    x.add_argument("--methods", help="comma-separated reduction methods")
    x.add_argument("--repetitions", type=int)
    x.add_argument("--k", type=int)
    x.add_argument("--subsample", type=int)
    x.add_argument("--epsilon-percentile", type=float)
    x.add_argument("--epsilon-source", choices=mt.EPSILON_SOURCES)
    x.add_argument("--min-coverage", type=float)
    x.add_argument("--kappa", type=int)
    x.add_argument("--p-norm", type=float)
    x.add_argument("--train-fraction", type=float)
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    return parser


def _explicit_flags(argv) -> set[str]:
    out = set()
    for token in argv:
        if token.startswith("--"):
            out.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return out


def _apply_config_file(args, argv):
    if not getattr(args, "config", None):
        return
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict):
        raise UsageError("--config must hold a JSON object of flag values")
    explicit = _explicit_flags(argv)
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise UsageError(f"config key {key!r} does not match any flag of this command")
        if dest not in explicit:
            setattr(args, dest, value)


def _cmd_generate(args) -> int:
    spec = SyntheticSpec(
        n_items=args.n,
        n_features=args.features,
        k_clusters=args.clusters,
        spread=args.spread,
        sigma_e=args.sigma_e,
        seed=args.seed,
    )
    data, truth = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset_csv(out / "data.csv", data, target=args.target)
    io.write_ground_truth(out / "truth.json", truth, spec=spec)
    print(f"wrote {out / 'data.csv'} ({data.n_items} rows) and {out / 'truth.json'}")
    return EXIT_OK


def _load_predictor(args, data):
    if args.predictor == "oracle":
        if not args.truth:
            raise UsageError("--predictor oracle requires --truth")
        truth = io.read_ground_truth(args.truth)
        return oracle_predictor(truth)
    return knn_predictor(data, n_neighbors=args.knn_neighbors)


def _cmd_explain(args) -> int:
    data = io.read_dataset_csv(args.data, target=args.target, task=args.task)
    f = _load_predictor(args, data)
    labeled = data.with_labels(f(data.X))

    if args.explainer == "ingest":
        if not args.models_in:
            raise UsageError("--explainer ingest requires --models-in")
        models = io.read_model_set(args.models_in)
        if models.n_features != data.n_features:
            raise UsageError("ingested models do not match the data dimensionality")
    else:
        config = ExplainerConfig(
            method=args.explainer,
            noise_sigma=args.noise_sigma,
            n_perturbations=args.n_perturbations,
            kernel_width=args.kernel_width,
            ridge_lambda=args.ridge_lambda,
            fd_step=args.fd_step,
            seed=args.seed,
        )
        m = args.m
        if m > data.n_items:
            _warn(f"m={m} exceeds n={data.n_items}; explaining every item")
            m = data.n_items
        models, _ = generate_explanations(f, labeled, m, config)

    io.write_model_set(args.out, models)
    if args.labeled_out:
        io.write_dataset_csv(args.labeled_out, labeled, target=args.target)
    if args.bb_losses_out:
        kind = "squared-error" if data.task == "regression" else "binary-cross-entropy"
        io.write_losses_csv(args.bb_losses_out, pointwise_loss(labeled.y, data.y, kind))
    print(f"wrote {args.out} ({models.n_models} local models)")
    return EXIT_OK


def _cmd_reduce(args) -> int:
    models = io.read_model_set(args.models)
    data = io.read_dataset_csv(args.data, target=args.target, task=args.task)
    loss = build_loss_matrix(models, data)

    k = args.k
    if k >= models.n_models:
        _warn(f"k={k} >= m={models.n_models}; the full model set is returned")
        k = models.n_models

    needs_epsilon = args.method in ("greedy-max-coverage", "exact-max-coverage", "const-min-loss")
    epsilon = args.epsilon
    if epsilon is None and needs_epsilon:
        if args.epsilon_source == "loss-matrix":
            epsilon = mt.epsilon_from_quantile(loss.L, args.epsilon_percentile)
        else:
            if not args.bb_losses:
                raise UsageError(
                    "--epsilon-source closed-box needs --bb-losses (from `explain "
                    "--bb-losses-out`); alternatively pass --epsilon or "
                    "--epsilon-source loss-matrix"
                )
            epsilon = mt.epsilon_from_quantile(io.read_losses_csv(args.bb_losses), args.epsilon_percentile)

    config = ReductionConfig(
        method=args.method,
        k=k,
        epsilon=epsilon,
        min_coverage=args.min_coverage if args.method == "const-min-loss" else None,
        seed=args.seed,
    )
    proxies, trace = rd.run_reduction(loss, config, models=models, data=data)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_proxy_set(out / "proxies.json", proxies)
    if trace is not None:
        io.write_trace_csv(out / "trace.csv", trace)
    print(f"wrote {out / 'proxies.json'} (|S|={len(proxies.S)})")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    models = io.read_model_set(args.models)
    proxies = io.read_proxy_set(args.proxies)
    train = io.read_dataset_csv(args.data, target=args.target, task=args.task)
    test = None
    if args.test_data:
        try:
            test = io.read_dataset_csv(args.test_data, target=args.target, task=args.task)
        except ValueError as exc:
            if "no data rows" in str(exc):
                _warn("test data is empty; test fidelity will be absent")
            else:
                raise
    else:
        _warn("no test data given; test fidelity will be absent")

    loss = build_loss_matrix(models, train)
    report = mt.evaluate_proxies(
        loss,
        proxies.S,
        models,
        train,
        test,
        epsilon=proxies.config.epsilon,
        kappa=args.kappa,
        p_norm=args.p_norm,
    )
    io.write_metrics(args.out, report)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_experiment(args, argv) -> int:
    plan_doc = {}
    if args.plan:
        plan_doc = json.loads(Path(args.plan).read_text())
    explicit = _explicit_flags(argv)
    overrides = {
        "axis": args.axis,
        "repetitions": args.repetitions,
        "k": args.k,
        "subsample": args.subsample,
        "epsilon_percentile": args.epsilon_percentile,
        "epsilon_source": args.epsilon_source,
        "min_coverage": args.min_coverage,
        "kappa": args.kappa,
        "p_norm": args.p_norm,
        "train_fraction": args.train_fraction,
    }
    for key, value in overrides.items():
        if value is not None:
            plan_doc[key] = value
    if args.methods:
        plan_doc["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.axis_values:
        values = [float(v) for v in args.axis_values.split(",")]
        if plan_doc.get("axis", "k") in ("k", "subsample"):
            values = [int(v) for v in values]
        plan_doc["axis_values"] = values
    if "seed" in explicit or "seed" not in plan_doc:
        plan_doc["seed"] = args.seed

    plan = ExperimentPlan.from_json_dict(plan_doc)
    rows = run_experiment(plan, workers=args.workers)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_sweep_csv(out / "sweep.csv", rows)
    written = [out / "sweep.csv"]
    if not args.no_figures:
        from .plots import render_sweep_figures

        written += render_sweep_figures(rows, out)
    print(f"wrote {', '.join(str(p) for p in written)} ({len(rows)} rows)")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args, argv)
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "explain":
            return _cmd_explain(args)
        if args.command == "reduce":
            return _cmd_reduce(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "experiment":
            return _cmd_experiment(args, argv)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (rd.ExactBudgetError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
