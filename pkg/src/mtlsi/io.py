"""File formats: CSV inputs, JSON outcomes and results, interval tables and run manifests.

Floats are written with 17 significant digits, so every table read back
with the functions here reproduces the in-memory values exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import MultiTaskDataset, SelectionOutcome, TaskSelection
from .exceptions import MissingFile, NonNumericCell, ShapeMismatch
from .inference import InferenceResult, Intervals
from .simulation import ExperimentResult, fmt, metrics_table, render_csv, tuning_table

INTERVAL_COLUMNS = ["task", "feature", "estimate", "lower", "upper", "stderr", "method", "alpha"]


# ---------------------------------------------------------------------------
# CSV input

def _read_numeric_csv(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ShapeMismatch(f"{path}: file is empty")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ShapeMismatch(f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCell(str(path), lineno, header[col], cell) from None
                if not math.isfinite(v):
                    raise NonNumericCell(str(path), lineno, header[col], cell)
                vals.append(v)
            rows.append(vals)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def load_multitask_csv(x_paths, y_paths, sigmas=None, standardize_response=False):
    """Load one (X, y) pair of CSV files per task; returns ``(dataset, info)``.

    Each file has a header row. Design columns are centered on load and
    ``info`` records the removed column means, the response transformation
    and the feature names.
    """
    if len(x_paths) != len(y_paths):
        raise ShapeMismatch(f"{len(x_paths)} design files but {len(y_paths)} response files")
    if not x_paths:
        raise ShapeMismatch("no tasks given")
    Xs, ys, means, names, y_shift, y_scale = [], [], [], None, [], []
    for k, (xp, yp) in enumerate(zip(x_paths, y_paths)):
        hx, X = _read_numeric_csv(xp)
        hy, Y = _read_numeric_csv(yp)
        if X.shape[0] == 0:
            raise ShapeMismatch(f"task {k}: {xp} has no data rows (n_k = 0)")
        if Y.shape[1] != 1:
            raise ShapeMismatch(f"task {k}: {yp} must have exactly one column, found {Y.shape[1]}")
        if Y.shape[0] != X.shape[0]:
            raise ShapeMismatch(f"task {k}: {xp} has {X.shape[0]} rows but {yp} has {Y.shape[0]}")
        if names is None:
            names = hx
        elif len(hx) != len(names):
            raise ShapeMismatch(f"task {k}: {len(hx)} features, task 0 has {len(names)}")
        y = Y[:, 0]
        if standardize_response:
            sd = float(np.std(y, ddof=1)) if y.size > 1 else 1.0
            shift, scale = float(np.mean(y)), (sd if sd > 0 else 1.0)
            y = (y - shift) / scale
        else:
            shift, scale = 0.0, 1.0
        means.append(X.mean(axis=0).tolist())
        Xs.append(X)
        ys.append(y)
        y_shift.append(shift)
        y_scale.append(scale)
    dataset = MultiTaskDataset.from_arrays(Xs, ys, sigmas=sigmas, center=True)
    info = {"centered": True, "column_means": means, "features": names,
            "response_standardized": bool(standardize_response),
            "response_shift": y_shift, "response_scale": y_scale}
    return dataset, info


# ---------------------------------------------------------------------------
# JSON helpers

def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    return json.loads(path.read_text())


def outcome_to_dict(outcome: SelectionOutcome):
    return {
        "lam": outcome.lam, "lam0": outcome.lam0, "n_outer": outcome.n_outer,
        "objective_history": list(outcome.objective_history),
        "tasks": [{
            "active": t.active.tolist(), "signs": t.signs.tolist(),
            "magnitudes": t.magnitudes.tolist(), "subgrad": t.subgrad.tolist(),
            "weights": t.weights.tolist(), "omega": t.omega.tolist(), "coef": t.coef.tolist(),
            "ridge": t.ridge, "omega_scale": t.omega_scale,
        } for t in outcome.tasks],
    }


def outcome_from_dict(d) -> SelectionOutcome:
    tasks = [TaskSelection(active=np.array(t["active"], dtype=int), signs=t["signs"],
                           magnitudes=t["magnitudes"], subgrad=t["subgrad"], weights=t["weights"],
                           omega=t["omega"], coef=t["coef"], ridge=float(t["ridge"]),
                           omega_scale=float(t["omega_scale"]))
             for t in d["tasks"]]
    return SelectionOutcome(tuple(tasks), lam=float(d["lam"]), lam0=float(d["lam0"]),
                            n_outer=int(d["n_outer"]), objective_history=d["objective_history"])


def write_outcome(outcome, path):
    _dump(outcome_to_dict(outcome), path)


def read_outcome(path) -> SelectionOutcome:
    return outcome_from_dict(_load(path))


def result_to_dict(result: InferenceResult):
    return {"labels": [list(lab) for lab in result.labels], "mle": result.mle.tolist(),
            "inv_info": result.inv_info.tolist(), "method": result.method,
            "diagnostics": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                            for k, v in result.diagnostics.items()}}


def result_from_dict(d) -> InferenceResult:
    q = len(d["labels"])
    return InferenceResult(tuple((int(k), int(j)) for k, j in d["labels"]),
                           np.array(d["mle"], dtype=float),
                           np.array(d["inv_info"], dtype=float).reshape(q, q),
                           dict(d["diagnostics"]), d["method"])


def write_result(result, path):
    _dump(result_to_dict(result), path)


def read_result(path) -> InferenceResult:
    return result_from_dict(_load(path))


# ---------------------------------------------------------------------------
# interval tables

def write_intervals_csv(intervals: Intervals, path):
    rows = [[k, j, e, lo, hi, s, intervals.method, intervals.alpha]
            for (k, j), e, lo, hi, s in zip(intervals.labels, intervals.estimate, intervals.lower,
                                            intervals.upper, intervals.stderr)]
    Path(path).write_text(render_csv(INTERVAL_COLUMNS, rows))


def read_intervals_csv(path, method=None, alpha=None) -> Intervals:
    """Read an interval table; ``method``/``alpha`` fill in for a table with no rows."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != INTERVAL_COLUMNS:
            raise ShapeMismatch(f"{path}: expected columns {INTERVAL_COLUMNS}")
        rows = list(reader)
    if not rows:
        return Intervals.empty(0.1 if alpha is None else alpha, method or "")
    col = lambda name: np.array([float(r[name]) for r in rows])  # noqa: E731
    return Intervals(tuple((int(r["task"]), int(r["feature"])) for r in rows), col("estimate"),
                     col("stderr"), col("lower"), col("upper"), float(rows[0]["alpha"]),
                     rows[0]["method"])


# ---------------------------------------------------------------------------
# manifests

def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Everything needed to rerun a command: arguments, resolved config, seeds and input digests."""

    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    version: str = ""
    inputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    started: str = field(default_factory=_now)
    finished: str = ""

    def add_inputs(self, paths):
        for p in paths:
            self.inputs[os.fspath(p)] = file_digest(p)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def write(self, path):
        if not self.finished:
            self.finished = _now()
        _dump(self.to_dict(), path)

    @classmethod
    def read(cls, path):
        return cls.from_dict(_load(path))


def write_experiment(result: ExperimentResult, out_dir, manifest: RunManifest = None):
    """Write ``metrics.csv``, ``tuning.csv`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(render_csv(*metrics_table(result)))
    (out / "tuning.csv").write_text(render_csv(*tuning_table(result)))
    if manifest is not None:
        manifest.extra.setdefault("summary", result.summary())
        manifest.write(out / "manifest.json")
    return out


__all__ = ["INTERVAL_COLUMNS", "RunManifest", "fmt", "load_multitask_csv", "read_intervals_csv",
           "read_outcome", "read_result", "write_experiment", "write_intervals_csv", "write_outcome",
           "write_result", "outcome_to_dict", "outcome_from_dict", "result_to_dict",
           "result_from_dict", "file_digest"]
