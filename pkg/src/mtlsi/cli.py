"""Command-line entry point: ``mtlsi {select,infer,tune,simulate,report}``.

Settings come from an optional flat TOML file (``--config``); flags given on
the command line override it. Exit codes: 0 success, 2 usage or
configuration error, 3 data error, 4 numerical failure. Failures print a
JSON error record to stderr (and to ``error.json`` in the output directory).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import naive_inference
from .core import RandomizationSpec
from .exceptions import DataError, MtlsiError, NumericalError
from .inference import InferenceResult, Intervals, infer_mtl, infer_single_task
from .io import (RunManifest, load_multitask_csv, read_intervals_csv, read_outcome, read_result,
                 write_experiment, write_intervals_csv, write_outcome, write_result)
from .lasso import LassoConfig, kkt_decompose
from .report import project_to_original, report_cv, report_jaccard, significant_sets
from .selection import MtlConfig, run_lasso_selection, run_mtl_selection
from .simulation import (METHODS, SimConfig, default_grid, fmt, render_csv, run_experiment,
                         select_for_tuning, tune_lambda)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flag dest -> config key
FLAG_KEYS = {"lam": "lam", "lam0": "lam0", "ridge": "ridge", "rand_scale": "rand_scale",
             "alpha": "alpha", "split_frac": "split_frac", "seed": "seed", "method": "method"}


def _build_parser():
    parser = _Parser(prog="mtlsi", description="Multi-task selection with selective inference.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--config", type=Path, help="flat TOML file of settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", type=Path, default=Path("."))
        if data:
            p.add_argument("--x", nargs="+", required=True, type=Path, help="design CSV per task")
            p.add_argument("--y", nargs="+", required=True, type=Path, help="response CSV per task")
            p.add_argument("--sigma", nargs="+", type=float, help="known noise level(s)")
            p.add_argument("--standardize-response", action="store_true")
        return p

    p = common(sub.add_parser("select", help="run the selection step"))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lambda0", dest="lam0", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--rand-scale", type=float)
    p.add_argument("--method", choices=["mtl", "lasso"])

    p = common(sub.add_parser("infer", help="intervals for a stored selection"))
    p.add_argument("--outcome", type=Path, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", choices=["mtl_si", "lasso_si", "naive"])

    p = common(sub.add_parser("tune", help="choose lambda on a validation set"))
    p.add_argument("--val-x", nargs="+", required=True, type=Path)
    p.add_argument("--val-y", nargs="+", required=True, type=Path)
    p.add_argument("--lambda", dest="lam_grid", type=float, nargs="+", help="grid of lambda values")
    p.add_argument("--lambda0", dest="lam0", type=float, help="lam0 as a multiple of lambda")
    p.add_argument("--rand-scale", type=float)
    p.add_argument("--split-frac", type=float)
    p.add_argument("--method", choices=list(METHODS))

    p = common(sub.add_parser("simulate", help="run a replicated simulation"), data=False)
    p.add_argument("--lambda", dest="lam", type=float, help="fixed lambda (skips tuning)")
    p.add_argument("--lambda0", dest="lam0", type=float, help="lam0 as a multiple of lambda")
    p.add_argument("--rand-scale", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--split-frac", type=float)
    p.add_argument("--method", action="append", choices=list(METHODS))
    p.add_argument("--reps", dest="n_reps", type=int)
    p.add_argument("--jobs", dest="n_jobs", type=int)

    p = common(sub.add_parser("report", help="Jaccard, coefficient of variation, back-projection"),
               data=False)
    p.add_argument("--intervals", type=Path, required=True)
    p.add_argument("--result", type=Path, help="result JSON; its information matrix gives the S.E.")
    p.add_argument("--tasks", type=int, help="number of tasks (default: from the table)")
    p.add_argument("--loadings", type=Path, help="CSV of loadings, original features x derived features")
    return parser


def _settings(args, keys):
    """Config file values overridden by explicitly given flags."""
    conf = {}
    if args.config is not None:
        if not args.config.is_file():
            from .exceptions import MissingFile
            raise MissingFile(str(args.config))
        with open(args.config, "rb") as fh:
            conf = tomllib.load(fh)
        nested = [k for k, v in conf.items() if isinstance(v, dict)]
        if nested:
            raise UsageError(f"config must be flat; found tables {nested}")
    for dest in keys:
        value = getattr(args, dest, None)
        if value is not None:
            conf[FLAG_KEYS.get(dest, dest)] = value
    return conf


def _load_data(args, conf):
    sigmas = args.sigma if args.sigma is not None else conf.get("sigma")
    if isinstance(sigmas, list) and len(sigmas) == 1:
        sigmas = sigmas[0]
    return load_multitask_csv(args.x, args.y, sigmas, args.standardize_response)


def _manifest(args, conf, extra=None):
    m = RunManifest(command=args.command, config=dict(conf), seeds={"seed": conf.get("seed", 0)},
                    version=__version__, extra=dict(extra or {}))
    for name in ("config", "x", "y", "val_x", "val_y", "outcome", "intervals", "result", "loadings"):
        value = getattr(args, name, None)
        if value is None:
            continue
        m.add_inputs(value if isinstance(value, list) else [value])
    m.extra["argv"] = [str(a) for a in getattr(args, "_argv", [])]
    return m


def _require(conf, key, kind=float):
    if conf.get(key) is None:
        raise UsageError(f"missing required setting '{key}' (flag or config)")
    return kind(conf[key])


def cmd_select(args):
    conf = _settings(args, ["lam", "lam0", "ridge", "rand_scale", "seed", "method"])
    conf.setdefault("rand_scale", 1.0)
    conf.setdefault("seed", 0)
    conf.setdefault("method", "mtl")
    dataset, info = _load_data(args, conf)
    lasso = LassoConfig(ridge=conf.get("ridge"))
    spec = RandomizationSpec(float(conf["rand_scale"]), int(conf["seed"]))
    lam = _require(conf, "lam")
    if conf["method"] == "mtl":
        outcome = run_mtl_selection(dataset, spec, MtlConfig(lam=lam, lam0=conf.get("lam0"), lasso=lasso))
    else:
        outcome = run_lasso_selection(dataset, spec, lam, lasso)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_outcome(outcome, args.out_dir / "outcome.json")
    _manifest(args, conf, {"data": info, "q": outcome.q}).write(args.out_dir / "manifest.json")
    print(json.dumps({"q": outcome.q, "active": [t.active.tolist() for t in outcome.tasks]}))


def cmd_infer(args):
    conf = _settings(args, ["alpha", "method", "seed"])
    conf.setdefault("alpha", 0.1)
    conf.setdefault("method", "mtl_si")
    dataset, info = _load_data(args, conf)
    outcome = read_outcome(args.outcome)
    if outcome.K != dataset.K or outcome.p != dataset.p:
        from .exceptions import DimensionMismatch
        raise DimensionMismatch(f"outcome is for K={outcome.K}, p={outcome.p}; "
                                f"data has K={dataset.K}, p={dataset.p}")
    # the stored draw must still satisfy the selection's optimality conditions on these data
    for t, task in zip(outcome.tasks, dataset.tasks):
        kkt_decompose(task.X, task.y, t.omega, t.weights, t.ridge, t.coef, tol=1e-7)
    alpha, method = float(conf["alpha"]), conf["method"]
    result = None
    if method == "naive":
        intervals = naive_inference(dataset, outcome.active_sets, alpha)
    else:
        infer = infer_mtl if method == "mtl_si" else infer_single_task
        label = "MTL+SI" if method == "mtl_si" else "LASSO+SI"
        result = infer(dataset, outcome, method=label)
        intervals = result.intervals(alpha) if result.labels else Intervals.empty(alpha, label)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_intervals_csv(intervals, args.out_dir / "intervals.csv")
    if result is not None:
        write_result(result, args.out_dir / "result.json")
    _manifest(args, conf, {"data": info}).write(args.out_dir / "manifest.json")
    print(json.dumps({"n_intervals": len(intervals), "significant": intervals.significant()}))


def cmd_tune(args):
    conf = _settings(args, ["lam_grid", "lam0", "rand_scale", "split_frac", "seed", "method"])
    conf.setdefault("method", "mtl_si")
    conf.setdefault("seed", 0)
    train, info = _load_data(args, conf)
    val, _ = load_multitask_csv(args.val_x, args.val_y, None, args.standardize_response)
    sim_keys = {"rand_scale": conf.get("rand_scale", 1.0), "split_frac": conf.get("split_frac"),
                "lam0_factor": conf.get("lam0", 50.0), "seed": int(conf["seed"]),
                "n": train.tasks[0].n, "p": train.p, "K": train.K, "lam": 1.0}
    sim = SimConfig(**sim_keys)
    grid = (np.asarray(conf["lam_grid"], dtype=float) if conf.get("lam_grid")
            else default_grid(train))
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise UsageError("the lambda grid must be positive and increasing")
    method = conf["method"]
    lam, mse = tune_lambda(lambda tr, l, i: select_for_tuning(method, tr, l, sim, int(conf["seed"])),
                           [(train, val)], grid)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "tuning.csv").write_text(
        render_csv(["lam", "val_mse", "chosen"], [[g, m, int(g == lam)] for g, m in zip(grid, mse)]))
    _manifest(args, conf, {"data": info, "lam": lam}).write(args.out_dir / "manifest.json")
    print(json.dumps({"lambda": lam}))


def cmd_simulate(args):
    conf = _settings(args, ["lam", "lam0", "rand_scale", "alpha", "split_frac", "seed", "method",
                            "n_reps", "n_jobs"])
    if "lam0" in conf:
        conf["lam0_factor"] = conf.pop("lam0")
    if "method" in conf:
        conf["methods"] = conf.pop("method")
    try:
        config = SimConfig.from_mapping(conf)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    result = run_experiment(config)
    manifest = _manifest(args, config.to_dict())
    manifest.seeds = {"seed": config.seed}
    write_experiment(result, args.out_dir, manifest)
    print(json.dumps(result.summary()))


def cmd_report(args):
    intervals = read_intervals_csv(args.intervals)
    K = args.tasks if args.tasks is not None else 1 + max((k for k, _ in intervals.labels), default=-1)
    if K < 1:
        raise UsageError("no tasks in the interval table; pass --tasks")
    sets = significant_sets(intervals, K)
    jac = report_jaccard(sets)
    if args.result is not None:
        res: InferenceResult = read_result(args.result)
        cv = report_cv(res.mle, res.inv_info)
    else:
        cv = report_cv(intervals.estimate, intervals.stderr)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "jaccard.csv").write_text(
        render_csv(["task"] + [f"task{k}" for k in range(K)],
                   [[k] + list(jac[k]) for k in range(K)]))
    (args.out_dir / "cv.csv").write_text(
        render_csv(["task", "feature", "cv"], [[k, j, c] for (k, j), c in zip(intervals.labels, cv)]))
    if args.loadings is not None:
        from .io import _read_numeric_csv
        _, A = _read_numeric_csv(args.loadings)
        rows = []
        for k in range(K):
            idx = [i for i, (kk, _) in enumerate(intervals.labels) if kk == k]
            E = [intervals.labels[i][1] for i in idx]
            beta = project_to_original(A[:, E], intervals.estimate[idx])
            rows.extend([k, i, b] for i, b in enumerate(beta))
        (args.out_dir / "backprojection.csv").write_text(
            render_csv(["task", "original_feature", "coefficient"], rows))
    _manifest(args, {"tasks": K}).write(args.out_dir / "manifest.json")
    print(json.dumps({"jaccard": jac.tolist()}))


COMMANDS = {"select": cmd_select, "infer": cmd_infer, "tune": cmd_tune,
            "simulate": cmd_simulate, "report": cmd_report}


def _error_record(exc, code, out_dir):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("path", "row", "column", "task", "columns", "residual"):
        value = getattr(exc, attr, None)
        if value is not None:
            record[attr] = value if isinstance(value, (int, str, list)) else fmt(value)
    text = json.dumps(record, default=str)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        args._argv = argv
        COMMANDS[args.command](args)
        return 0
    except DataError as exc:
        return _error_record(exc, EXIT_DATA, getattr(args, "out_dir", None))
    except NumericalError as exc:
        return _error_record(exc, EXIT_NUMERICAL, getattr(args, "out_dir", None))
    except (UsageError, tomllib.TOMLDecodeError) as exc:
        return _error_record(exc, EXIT_USAGE, getattr(args, "out_dir", None))
    except MtlsiError as exc:
        return _error_record(exc, EXIT_NUMERICAL, getattr(args, "out_dir", None))
    except ValueError as exc:
        return _error_record(exc, EXIT_USAGE, getattr(args, "out_dir", None))


if __name__ == "__main__":
    sys.exit(main())
