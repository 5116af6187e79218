"""Synthetic multi-task experiments: data generation, tuning, replication and metrics.

Designs are drawn with equicorrelated Gaussian rows, column-centered and
divided by ``sqrt(n)`` so that ``X'X`` is close to the population
correlation matrix and the per-task signal-to-noise ratio is
``beta' T beta / (n sigma^2)``.

Coverage is scored against the fixed-design projection of the true mean
onto the selected columns, ``pinv(X_E) X beta``, which is exactly the
quantity the least-squares estimate on ``E`` is unbiased for. The
population analogue ``T_EE^-1 T_E. beta`` is available as ``target="population"``.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy import linalg

from .baselines import (naive_inference, round_half_up, single_task_si, split_fraction_for,
                        split_then_infer)
from .core import MultiTaskDataset, RandomizationSpec
from .exceptions import MtlsiError
from .inference import infer_mtl
from .selection import MtlConfig, run_lasso_selection, run_mtl_selection

METHODS = ("mtl_si", "lasso_si", "ds", "naive")


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    p: int = 50
    K: int = 3
    rho: float = 0.3
    s_G: float = 0.9
    s_T: float = 0.2
    alpha: float = 0.1
    rand_scale: float = 1.0
    split_frac: Optional[float] = None   # None: 1 / (1 + rand_scale^2)
    sigma: float = 1.0
    n_reps: int = 100
    n_tune: int = 5                      # pilot replications used to pick lambda
    lam: Optional[float] = None          # fixed lambda for every method; skips tuning
    lam_grid: Optional[tuple] = None     # absolute grid; None: log-spaced around lambda_max
    grid_size: int = 20
    grid_range: tuple = (0.05, 2.0)
    lam0_factor: float = 50.0
    methods: tuple = METHODS
    target: str = "fixed"
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("lam_grid", "grid_range", "methods"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        if min(self.n, self.p, self.K) < 1:
            raise ValueError("n, p and K must be positive")
        if not (0 <= self.s_G <= 1 and 0 <= self.s_T <= 1):
            raise ValueError("sparsity fractions must lie in [0, 1]")
        if not -1.0 / max(self.p - 1, 1) < self.rho < 1:
            raise ValueError("rho outside the positive-definite range")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.rand_scale <= 0:
            raise ValueError("rand_scale must be positive")
        if self.split_frac is not None and not 0 < self.split_frac < 1:
            raise ValueError("split_frac must lie in (0, 1)")
        if self.lam_grid is not None:
            grid = np.asarray(self.lam_grid, dtype=float)
            if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
                raise ValueError("lam_grid must be positive and strictly increasing")
        if self.lam is None and self.n_tune < 1:
            raise ValueError("either fix lam or use at least one tuning replication")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.target not in ("fixed", "population"):
            raise ValueError("target must be 'fixed' or 'population'")

    @property
    def fraction(self):
        return split_fraction_for(self.rand_scale) if self.split_frac is None else self.split_frac

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        extra = set(mapping) - known
        if extra:
            raise ValueError(f"unknown configuration keys: {sorted(extra)}")
        return cls(**mapping)

    def to_dict(self):
        return asdict(self)


def method_label(name, config: SimConfig):
    return {"mtl_si": f"MTL({config.rand_scale:g})+SI",
            "lasso_si": f"LASSO({config.rand_scale:g})+SI",
            "ds": f"DS({config.fraction:g})",
            "naive": "Naive"}[name]


# ---------------------------------------------------------------------------
# data generation

def equicorrelation(p, rho):
    return (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))


def generate_design(n, p, rho, rng, normalize=True):
    """Rows from ``N(0, T(rho))``, columns centered and, by default, divided by ``sqrt(n)``."""
    if not -1.0 / max(p - 1, 1) < rho < 1:
        raise ValueError("rho outside the positive-definite range")
    rng = np.random.default_rng(rng)
    chol = np.linalg.cholesky(equicorrelation(p, rho))
    X = rng.standard_normal((n, p)) @ chol.T
    X -= X.mean(axis=0)
    if normalize:
        X /= math.sqrt(n)
    return X


def coefficient_grid(p, K):
    """Equally spaced magnitudes covering ``[sqrt(2 log p), sqrt(6 log p)]``."""
    lo, hi = math.sqrt(2 * math.log(p)), math.sqrt(6 * math.log(p))
    return np.linspace(lo, hi, max(K, 2))


def generate_coefficients(p, K, s_G, s_T, rng):
    """Sparse p x K coefficients with a shared row support and per-task dropouts."""
    rng = np.random.default_rng(rng)
    n_zero_rows = round_half_up(s_G * p)
    n_task_zeros = round_half_up(s_T * K)
    beta = np.zeros((p, K))
    grid = coefficient_grid(p, K)
    active_rows = np.sort(rng.permutation(p)[n_zero_rows:])
    for j in active_rows:
        on = np.sort(rng.permutation(K)[n_task_zeros:])
        mags = rng.choice(grid, size=on.size, replace=False)
        beta[j, on] = rng.choice([-1.0, 1.0], size=on.size) * mags
    return beta


def snr(beta_k, rho, n, sigma=1.0):
    beta_k = np.asarray(beta_k, dtype=float)
    return float(beta_k @ equicorrelation(beta_k.size, rho) @ beta_k / (n * sigma ** 2))


@dataclass(frozen=True)
class SimData:
    beta: np.ndarray
    train: MultiTaskDataset
    validation: MultiTaskDataset


def generate_data(config: SimConfig, rng, with_validation=True) -> SimData:
    rng = np.random.default_rng(rng)
    beta = generate_coefficients(config.p, config.K, config.s_G, config.s_T, rng)

    def draw():
        Xs = [generate_design(config.n, config.p, config.rho, rng) for _ in range(config.K)]
        ys = [X @ beta[:, k] + config.sigma * rng.standard_normal(config.n) for k, X in enumerate(Xs)]
        return MultiTaskDataset.from_arrays(Xs, ys, sigmas=config.sigma, center=False)

    train = draw()
    return SimData(beta, train, draw() if with_validation else None)


def projected_target(X, beta_k, E):
    """``pinv(X_E) X beta``: what least squares on ``E`` estimates without bias."""
    E = np.asarray(E, dtype=int)
    if E.size == 0:
        return np.zeros(0)
    XE = X[:, E]
    return linalg.solve(XE.T @ XE, XE.T @ (X @ beta_k), assume_a="pos")


def population_target(rho, beta_k, E):
    E = np.asarray(E, dtype=int)
    if E.size == 0:
        return np.zeros(0)
    T = equicorrelation(np.size(beta_k), rho)
    return linalg.solve(T[np.ix_(E, E)], T[E] @ beta_k, assume_a="pos")


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricsRecord:
    rep: int
    method: str
    lam: float
    status: str = "ok"
    n_selected: int = 0
    n_significant: int = 0
    coverage: float = math.nan
    mean_length: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    f1: float = math.nan
    snr: tuple = ()
    lengths: tuple = field(default=(), repr=False)
    error: str = ""

    def __post_init__(self):
        for name in ("coverage", "precision", "recall", "f1"):
            v = getattr(self, name)
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name} = {v} outside [0, 1]")

    @property
    def ok(self):
        return self.status == "ok"


def compute_metrics(intervals, target, true_active, *, rep=0, method="", lam=math.nan, snrs=()):
    """Coverage rate, lengths, precision, recall and F1 for one replication.

    ``target`` lines up with ``intervals.labels``; ``true_active`` is the set
    of (task, feature) pairs with a nonzero true coefficient. Precision is 0
    when nothing is significant and F1 is 0 when precision + recall = 0.
    """
    target = np.asarray(target, dtype=float)
    n_sel = len(intervals)
    misses = int(np.sum(~intervals.covers(target))) if n_sel else 0
    coverage = 1.0 - misses / max(n_sel, 1)
    significant = set(intervals.significant())
    hits = len(significant & set(true_active))
    precision = hits / len(significant) if significant else 0.0
    recall = hits / len(true_active) if true_active else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    lengths = tuple(float(x) for x in intervals.length)
    return MetricsRecord(rep=rep, method=method, lam=float(lam), n_selected=n_sel,
                         n_significant=len(significant), coverage=coverage,
                         mean_length=float(np.mean(lengths)) if lengths else math.nan,
                         precision=precision, recall=recall, f1=f1,
                         snr=tuple(float(s) for s in snrs), lengths=lengths)


# ---------------------------------------------------------------------------
# method runners

def _mtl_config(config, lam):
    return MtlConfig(lam=lam, lam0=config.lam0_factor * lam)


def select_for_tuning(name, dataset, lam, config: SimConfig, seed):
    """Active sets the method would carry into inference at ``lam``."""
    if name == "mtl_si":
        out = run_mtl_selection(dataset, RandomizationSpec(config.rand_scale, seed),
                                _mtl_config(config, lam))
    elif name == "lasso_si":
        out = run_lasso_selection(dataset, RandomizationSpec(config.rand_scale, seed), lam)
    elif name == "ds":
        from .baselines import make_split_plan
        plan = make_split_plan([t.n for t in dataset.tasks], config.fraction, seed)
        out = run_mtl_selection(dataset.subset(plan.selection), RandomizationSpec(0.0, seed),
                                _mtl_config(config, lam), omegas=[np.zeros(dataset.p)] * dataset.K)
    else:
        out = run_mtl_selection(dataset, RandomizationSpec(0.0, seed), _mtl_config(config, lam),
                                omegas=[np.zeros(dataset.p)] * dataset.K)
    return out.active_sets


def run_method(name, dataset, lam, config: SimConfig, seed):
    """Returns ``(intervals, inference_dataset)`` for one method on one dataset."""
    label = method_label(name, config)
    if name == "mtl_si":
        out = run_mtl_selection(dataset, RandomizationSpec(config.rand_scale, seed),
                                _mtl_config(config, lam))
        return infer_mtl(dataset, out, method=label).intervals(config.alpha), dataset
    if name == "lasso_si":
        res = single_task_si(dataset, lam, config.rand_scale, config.alpha, seed)
        return res.intervals, dataset
    if name == "ds":
        res = split_then_infer(dataset, config.fraction, _mtl_config(config, lam), config.alpha, seed)
        return res.intervals, dataset.subset(res.plan.inference)
    out = run_mtl_selection(dataset, RandomizationSpec(0.0, seed), _mtl_config(config, lam),
                            omegas=[np.zeros(dataset.p)] * dataset.K)
    return naive_inference(dataset, out.active_sets, config.alpha), dataset


# ---------------------------------------------------------------------------
# tuning

def validation_mse(train, validation, active_sets):
    """Task-averaged validation MSE of least-squares refits on the selected columns."""
    errs = []
    for t, v, E in zip(train.tasks, validation.tasks, active_sets):
        if len(E):
            b, *_ = linalg.lstsq(t.X[:, E], t.y)
            resid = v.y - v.X[:, E] @ b
        else:
            resid = v.y
        errs.append(float(np.mean(resid ** 2)))
    return float(np.mean(errs))


def lambda_max(dataset):
    """Smallest uniform weight at which the non-randomized LASSO returns zero in every task."""
    return float(max(np.max(np.abs(t.X.T @ t.y)) for t in dataset.tasks))


def default_grid(dataset, size=20, span=(0.05, 2.0)):
    lmax = lambda_max(dataset)
    return np.geomspace(span[0] * lmax, span[1] * lmax, size)


def pick_lambda(grid, mse):
    """Grid value with the smallest MSE; ties go to the larger lambda."""
    grid, mse = np.asarray(grid, dtype=float), np.asarray(mse, dtype=float)
    best = np.flatnonzero(mse == np.nanmin(mse))
    return float(grid[best[-1]])


@dataclass(frozen=True)
class TuningResult:
    method: str
    grid: tuple
    mse: tuple
    lam: float


def tune_lambda(select, pairs, grid):
    """Pick lambda by validation MSE averaged over ``(train, validation)`` pairs.

    ``select(train, lam, i)`` returns the active sets for pair ``i``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    mse = np.zeros(grid.size)
    for g, lam in enumerate(grid):
        mse[g] = np.mean([validation_mse(tr, va, select(tr, lam, i))
                          for i, (tr, va) in enumerate(pairs)])
    return pick_lambda(grid, mse), mse


def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


TUNE, EVAL, METHOD = 0, 1, 2


def tune_methods(config: SimConfig):
    """Per-method lambda from pilot replications that share data but not randomization."""
    pilots = [generate_data(config, np.random.default_rng([config.seed, TUNE, i]))
              for i in range(config.n_tune)]
    grid = (np.asarray(config.lam_grid, dtype=float) if config.lam_grid is not None
            else default_grid(pilots[0].train, config.grid_size, config.grid_range))
    pairs = [(d.train, d.validation) for d in pilots]
    out = {}
    for name in config.methods:
        m = METHODS.index(name)

        def select(tr, lam, i, name=name, m=m):
            try:
                return select_for_tuning(name, tr, lam, config, _seed(config.seed, TUNE, i, m))
            except MtlsiError:
                return [np.zeros(0, dtype=int)] * tr.K

        lam, mse = tune_lambda(select, pairs, grid)
        out[name] = TuningResult(name, tuple(float(x) for x in grid), tuple(float(x) for x in mse), lam)
    return out


# ---------------------------------------------------------------------------
# experiment

def run_replication(config: SimConfig, rep, lams):
    """All configured methods on replication ``rep``; failures become records, not exceptions."""
    data = generate_data(config, np.random.default_rng([config.seed, EVAL, rep]), with_validation=False)
    beta = data.beta
    snrs = [snr(beta[:, k], config.rho, config.n, config.sigma) for k in range(config.K)]
    truth = {(k, int(j)) for k in range(config.K) for j in np.flatnonzero(beta[:, k])}
    records = []
    for name in config.methods:
        label = method_label(name, config)
        lam = lams[name]
        try:
            iv, design = run_method(name, data.train, lam, config,
                                    _seed(config.seed, METHOD, rep, METHODS.index(name)))
            target = []
            for k in range(config.K):
                E = [j for (kk, j) in iv.labels if kk == k]
                if config.target == "fixed":
                    target.append(projected_target(design.tasks[k].X, beta[:, k], E))
                else:
                    target.append(population_target(config.rho, beta[:, k], E))
            target = np.concatenate(target) if target else np.zeros(0)
            records.append(compute_metrics(iv, target, truth, rep=rep, method=label, lam=lam,
                                           snrs=snrs))
        except (MtlsiError, np.linalg.LinAlgError) as exc:
            records.append(MetricsRecord(rep=rep, method=label, lam=lam, status="failed",
                                         snr=tuple(snrs), error=f"{type(exc).__name__}: {exc}"))
    return records


@dataclass(frozen=True)
class ExperimentResult:
    config: SimConfig
    records: tuple
    tuning: dict

    def for_method(self, label, ok_only=True):
        return [r for r in self.records if r.method == label and (r.ok or not ok_only)]

    def summary(self):
        """Per-method means over successful replications, with failure counts."""
        out = {}
        for label in dict.fromkeys(r.method for r in self.records):
            ok = self.for_method(label)
            n_failed = len(self.for_method(label, ok_only=False)) - len(ok)
            lengths = [r.mean_length for r in ok if not math.isnan(r.mean_length)]
            out[label] = {
                "n_ok": len(ok), "n_failed": n_failed,
                "coverage": float(np.mean([r.coverage for r in ok])) if ok else math.nan,
                "mean_length": float(np.mean(lengths)) if lengths else math.nan,
                "f1": float(np.mean([r.f1 for r in ok])) if ok else math.nan,
                "lam": ok[0].lam if ok else math.nan,
            }
        return out


def _rep_job(args):
    config, rep, lams = args
    return run_replication(config, rep, lams)


def run_experiment(config: SimConfig, methods=None) -> ExperimentResult:
    """Tune (unless ``config.lam`` is set), then run every replication.

    Replications are independent and seeded from ``(seed, rep, method)``;
    with ``n_jobs > 1`` they run in a process pool and are collected in
    replication order, so the output does not depend on scheduling.
    """
    if methods is not None:
        config = replace(config, methods=tuple(methods))
    if config.lam is not None:
        tuning = {}
        lams = {name: float(config.lam) for name in config.methods}
    else:
        tuning = tune_methods(config)
        lams = {name: tuning[name].lam for name in config.methods}
    jobs = [(config, rep, lams) for rep in range(config.n_reps)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            per_rep = list(pool.map(_rep_job, jobs))
    else:
        per_rep = [_rep_job(j) for j in jobs]
    records = tuple(r for recs in per_rep for r in recs)
    return ExperimentResult(config, records, tuning)


# ---------------------------------------------------------------------------
# tables

def fmt(x):
    """17 significant digits, enough to round-trip any double."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def metrics_table(result: ExperimentResult):
    K = result.config.K
    header = (["rep", "method", "lam", "status", "n_selected", "n_significant", "coverage",
               "mean_length", "precision", "recall", "f1"]
              + [f"snr_task{k}" for k in range(K)] + ["error"])
    rows = []
    for r in result.records:
        snrs = list(r.snr) + [math.nan] * (K - len(r.snr))
        rows.append([r.rep, r.method, r.lam, r.status, r.n_selected, r.n_significant, r.coverage,
                     r.mean_length, r.precision, r.recall, r.f1] + snrs + [r.error])
    return header, rows


def tuning_table(result: ExperimentResult):
    header = ["method", "lam", "val_mse", "chosen"]
    rows = []
    for name, t in result.tuning.items():
        for lam, mse in zip(t.grid, t.mse):
            rows.append([method_label(name, result.config), lam, mse, int(lam == t.lam)])
    return header, rows


def render_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    return buf.getvalue()
