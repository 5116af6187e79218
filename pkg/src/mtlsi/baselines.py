"""Comparison methods: unadjusted inference, data splitting and per-task selective inference.

Single-task selective inference conditions on the supports, signs and
inactive subgradients of each task's randomized LASSO and optimizes over
the magnitudes ``b > 0``. This is the usual single-task construction, not
the K = 1 case of the multi-task conditioning, which would also fix the
magnitude sums and so condition on more than the selection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .core import MultiTaskDataset, RandomizationSpec, SelectionOutcome
from .exceptions import DegreesOfFreedomExhausted, ShapeMismatch
from .inference import (InferenceResult, Intervals, _check_rank, infer_single_task,
                        plugin_sigma, z_intervals)
from .lasso import LassoConfig
from .selection import MtlConfig, run_lasso_selection, run_mtl_selection


@dataclass(frozen=True)
class BaselineResult:
    outcome: SelectionOutcome
    intervals: Intervals
    result: Optional[InferenceResult] = None
    plan: Optional["SplitPlan"] = None


def round_half_up(x):
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# naive

def naive_inference(dataset: MultiTaskDataset, active_sets, alpha=0.1, sigmas=None,
                    method="Naive") -> Intervals:
    """Classical z-intervals for the least-squares fit on each selected model.

    Noise levels come from ``sigmas``, then the dataset, then the plug-in
    estimate on the selected model.
    """
    if len(active_sets) != dataset.K:
        raise ShapeMismatch(f"{len(active_sets)} active sets for {dataset.K} tasks")
    if sigmas is None:
        sigmas = dataset.sigmas
    labels, est, se = [], [], []
    for k, (t, E, s) in enumerate(zip(dataset.tasks, active_sets, sigmas)):
        E = np.asarray(E, dtype=int)
        if E.size == 0:
            continue
        XE = t.X[:, E]
        _check_rank(XE, k)
        sigma = plugin_sigma(XE, t.y) if s is None else float(s)
        gram_inv = linalg.inv(XE.T @ XE)
        est.append(gram_inv @ (XE.T @ t.y))
        se.append(sigma * np.sqrt(np.diag(gram_inv)))
        labels.extend((k, int(j)) for j in E)
    if not labels:
        return Intervals.empty(alpha, method)
    return z_intervals(labels, np.concatenate(est), np.concatenate(se), alpha, method)


# ---------------------------------------------------------------------------
# data splitting

@dataclass(frozen=True)
class SplitPlan:
    fraction: float
    selection: tuple   # per task, sorted row indices used to select
    inference: tuple   # per task, the remaining rows
    seed: int

    def __post_init__(self):
        for k, (a, b) in enumerate(zip(self.selection, self.inference)):
            if np.intersect1d(a, b).size:
                raise ValueError(f"task {k}: selection and inference rows overlap")


def make_split_plan(sizes, fraction, seed=0) -> SplitPlan:
    """Uniform random partition of each task's rows; ``round(fraction * n_k)`` go to selection."""
    if not 0 < fraction < 1:
        raise ValueError("split fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    sel, inf = [], []
    for k, n in enumerate(sizes):
        m = round_half_up(fraction * n)
        if m < 1 or m >= n:
            raise ShapeMismatch(f"task {k}: splitting {n} rows at {fraction} leaves an empty half")
        perm = rng.permutation(n)
        sel.append(np.sort(perm[:m]))
        inf.append(np.sort(perm[m:]))
    return SplitPlan(float(fraction), tuple(sel), tuple(inf), seed)


def split_fraction_for(v):
    """Splitting fraction carrying about as much selection information as randomizer scale ``v``."""
    return 1.0 / (1.0 + v * v)


def split_then_infer(dataset: MultiTaskDataset, fraction, config: MtlConfig, alpha=0.1, seed=0,
                     plan: SplitPlan = None) -> BaselineResult:
    """Select with the non-randomized multi-task algorithm on one part, infer on the rest."""
    plan = make_split_plan([t.n for t in dataset.tasks], fraction, seed) if plan is None else plan
    sel_data = dataset.subset(plan.selection)
    inf_data = dataset.subset(plan.inference)
    outcome = run_mtl_selection(sel_data, RandomizationSpec(0.0, seed), config,
                                omegas=[np.zeros(dataset.p)] * dataset.K)
    for k, (t, E) in enumerate(zip(inf_data.tasks, outcome.active_sets)):
        if t.n - E.size <= 0:
            raise DegreesOfFreedomExhausted(
                f"task {k}: {t.n} held-out rows for {E.size} selected features")
    intervals = naive_inference(inf_data, outcome.active_sets, alpha, method=f"DS({fraction:g})")
    return BaselineResult(outcome, intervals, plan=plan)


# ---------------------------------------------------------------------------
# single-task selective inference

def single_task_si(dataset: MultiTaskDataset, lam, v=1.0, alpha=0.1, seed=0, sigmas=None,
                   lasso: LassoConfig = LassoConfig(), omegas=None) -> BaselineResult:
    """Randomized LASSO at uniform weight ``lam`` per task, then selective MLE intervals.

    Tasks are conditioned independently; the joint computation below is
    block diagonal across tasks, so it equals running each task alone.
    """
    outcome = run_lasso_selection(dataset, RandomizationSpec(v, seed), lam, lasso, omegas=omegas)
    method = f"LASSO({v:g})+SI"
    result = infer_single_task(dataset, outcome, sigmas=sigmas, method=method)
    return BaselineResult(outcome, result.intervals(alpha), result=result)
