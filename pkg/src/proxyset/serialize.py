"""File formats: dataset CSV, model-set / proxy-set / metrics / ground-truth
JSON, greedy trace CSV, and the experiment sweep CSV.

Floats are written with 17 significant digits in data-bearing files (exact
round trip) and 15 in the sweep table.  Writers are deterministic so equal
inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import Dataset, LocalModelSet, ProxySet, ReductionConfig
from .metrics import MetricReport
from .reduce import ReductionTrace

DEFAULT_TARGET_COLUMN = "target"

SWEEP_SCHEMA_COMMENT = "# proxyset sweep v1"
SWEEP_COLUMNS = (
    "method",
    "axis",
    "axis_value",
    "repetition",
    "n_train",
    "n_test",
    "m_models",
    "k",
    "epsilon",
    "epsilon_percentile",
    "epsilon_source",
    "min_coverage",
    "kappa",
    "p_norm",
    "seed",
    "coverage",
    "train_fidelity",
    "test_fidelity",
    "instability",
    "constraint_met",
    "coverage_ratio",
    "loss_ratio",
)


def _fmt(value, digits: int = 17) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), f".{digits}g")
    return str(value)


def write_dataset_csv(path, data: Dataset, target: str = DEFAULT_TARGET_COLUMN):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(data.n_features)] + [target])
        for row, label in zip(data.X, data.y):
            writer.writerow([_fmt(v) for v in row] + [_fmt(label)])


def read_dataset_csv(path, target: str = DEFAULT_TARGET_COLUMN, task: str = "regression") -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty CSV")
        if target not in header:
            raise ValueError(f"{path}: no target column named {target!r}")
        t = header.index(target)
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.asarray(rows)
    X = np.delete(arr, t, axis=1)
    return Dataset(X, arr[:, t], task=task)


def write_model_set(path, models: LocalModelSet):
    doc = {
        "kind": models.kind,
        "B": [[float(v) for v in row] for row in models.B],
    }
    if models.origin is not None:
        doc["origin"] = [int(i) for i in models.origin]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_model_set(path) -> LocalModelSet:
    doc = json.loads(Path(path).read_text())
    origin = doc.get("origin")
    return LocalModelSet(
        kind=doc["kind"],
        B=np.asarray(doc["B"], dtype=float),
        origin=None if origin is None else np.asarray(origin, dtype=int),
    )


def write_proxy_set(path, proxies: ProxySet):
    doc = {
        "S": list(proxies.S),
        "config": proxies.config.to_json_dict(),
        "achieved_coverage": proxies.achieved_coverage,
        "constraint_met": proxies.constraint_met,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_proxy_set(path) -> ProxySet:
    doc = json.loads(Path(path).read_text())
    return ProxySet(
        S=tuple(int(i) for i in doc["S"]),
        config=ReductionConfig.from_json_dict(doc["config"]),
        achieved_coverage=doc.get("achieved_coverage"),
        constraint_met=doc.get("constraint_met"),
    )


def write_metrics(path, report: MetricReport):
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")


def read_metrics(path) -> MetricReport:
    return MetricReport.from_json_dict(json.loads(Path(path).read_text()))


def write_ground_truth(path, truth, spec=None):
    doc = {
        "beta": [[float(v) for v in row] for row in truth.beta],
        "centroids": [[float(v) for v in row] for row in truth.centroids],
        "cluster_id": [int(i) for i in truth.cluster_id],
        "feature_mean": [float(v) for v in truth.feature_mean],
        "feature_scale": [float(v) for v in truth.feature_scale],
    }
    if spec is not None:
        doc["spec"] = spec.to_json_dict()
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_ground_truth(path):
    from .synth import SyntheticGroundTruth

    doc = json.loads(Path(path).read_text())
    return SyntheticGroundTruth(
        beta=np.asarray(doc["beta"], dtype=float),
        centroids=np.asarray(doc["centroids"], dtype=float),
        cluster_id=np.asarray(doc["cluster_id"], dtype=int),
        feature_mean=np.asarray(doc["feature_mean"], dtype=float),
        feature_scale=np.asarray(doc["feature_scale"], dtype=float),
    )


def write_trace_csv(path, trace: ReductionTrace):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "chosen_index", "coverage", "objective"])
        for it, step in enumerate(trace.steps):
            writer.writerow([it, step.chosen, _fmt(step.coverage), _fmt(step.objective)])


def write_losses_csv(path, losses):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss"])
        for v in np.asarray(losses, dtype=float).ravel():
            writer.writerow([_fmt(v)])


def read_losses_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        return np.asarray([float(row[0]) for row in reader if row])


def write_sweep_csv(path, rows: list[dict]):
    with Path(path).open("w", newline="") as fh:
        fh.write(SWEEP_SCHEMA_COMMENT + "\n")
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(col), digits=15) for col in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, value in raw.items():
                if value == "" or value is None:
                    row[key] = None
                elif key in ("method", "axis", "epsilon_source", "axis_value"):
                    row[key] = value
                elif key == "constraint_met":
                    row[key] = value == "true"
                elif key in ("repetition", "n_train", "n_test", "m_models", "k", "kappa", "seed"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows
