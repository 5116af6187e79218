"""Shared-sparsity selection by iterated local linear approximation.

The joint penalty ``2 lam sum_j sqrt(sum_k |theta_jk|)`` is linearized at
the previous iterate, which turns each outer step into K independent
weighted LASSO problems with weights ``min(lam0, lam / sqrt(sum_k |theta_jk|))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RandomizationSpec, SelectionOutcome, TaskSelection
from .exceptions import NonConvergence
from .lasso import LassoConfig, kkt_decompose, sample_randomization, solve_weighted_lasso


@dataclass(frozen=True)
class MtlConfig:
    lam: float
    lam0: float = None  # defaults to 50 * lam
    outer_tol: float = 1e-6
    max_outer: int = 1000
    lasso: LassoConfig = field(default_factory=LassoConfig)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.lam0 is None:
            object.__setattr__(self, "lam0", 50.0 * self.lam)
        if not self.lam0 > 0:
            raise ValueError("lam0 must be positive")


def update_penalty_weights(coef, lam, lam0):
    """Weights ``min(lam0, lam / sqrt(sum_k |coef_jk|))`` for a p x K coefficient matrix."""
    total = np.abs(np.asarray(coef, dtype=float)).reshape(np.shape(coef)[0], -1).sum(axis=1)
    with np.errstate(divide="ignore"):
        raw = np.where(total > 0, lam / np.sqrt(np.where(total > 0, total, 1.0)), np.inf)
    return np.minimum(lam0, raw)


def reformulated_objective(coef, dataset, omegas, lam, ridges):
    """Sum of randomized losses plus ``2 lam sum_j sqrt(sum_k |coef_jk|)``."""
    coef = np.asarray(coef, dtype=float)
    total = 0.0
    for k, t in enumerate(dataset.tasks):
        theta = coef[:, k]
        resid = t.y - t.X @ theta
        total += 0.5 * resid @ resid - omegas[k] @ theta + 0.5 * ridges[k] * theta @ theta
    return total + 2.0 * lam * np.sum(np.sqrt(np.abs(coef).sum(axis=1)))


def draw_omegas(dataset, spec: RandomizationSpec):
    """One randomization draw per task, scaled by that task's sigma."""
    omegas, scales = [], []
    for k, t in enumerate(dataset.tasks):
        sigma = 1.0 if t.sigma is None else t.sigma
        omegas.append(sample_randomization(dataset.p, spec, k, sigma))
        scales.append(spec.scale * sigma)
    return omegas, scales


def _outcome_from_solution(dataset, coef, weights, omegas, scales, ridges, lasso_cfg, **meta):
    tasks = []
    for k, t in enumerate(dataset.tasks):
        theta = coef[:, k]
        signs, u, _ = kkt_decompose(t.X, t.y, omegas[k], weights[k], ridges[k], theta, lasso_cfg.tol)
        active = np.flatnonzero(theta)
        tasks.append(TaskSelection(active=active, signs=signs, magnitudes=np.abs(theta[active]),
                                   subgrad=u, weights=weights[k], omega=omegas[k], coef=theta,
                                   ridge=ridges[k], omega_scale=scales[k]))
    return SelectionOutcome(tuple(tasks), **meta)


def run_mtl_selection(dataset, spec: RandomizationSpec, config: MtlConfig, omegas=None,
                      keep_iterates=False):
    """Run the full selection loop and return a :class:`SelectionOutcome`.

    ``omegas`` overrides the draws implied by ``spec`` (pass zeros for the
    non-randomized algorithm). With ``keep_iterates`` the coefficient
    matrices of every outer iterate are attached as ``outcome.iterates``.
    """
    K, p = dataset.K, dataset.p
    if omegas is None:
        omegas, scales = draw_omegas(dataset, spec)
    else:
        omegas = [np.asarray(w, dtype=float) for w in omegas]
        scales = [spec.scale * (1.0 if t.sigma is None else t.sigma) for t in dataset.tasks]
    grams = [t.X.T @ t.X for t in dataset.tasks]
    ridges = [config.lasso.ridge_for(t.X) for t in dataset.tasks]
    lasso_cfgs = [LassoConfig(ridge=r, tol=config.lasso.tol, max_iter=config.lasso.max_iter)
                  for r in ridges]

    coef = np.column_stack([
        solve_weighted_lasso(t.X, t.y, omegas[k], np.full(p, config.lam), lasso_cfgs[k], gram=grams[k])
        for k, t in enumerate(dataset.tasks)])
    weights = [np.full(p, config.lam)] * K
    history = [reformulated_objective(coef, dataset, omegas, config.lam, ridges)]
    iterates = [coef.copy()]

    converged = False
    for it in range(1, config.max_outer + 1):
        w = update_penalty_weights(coef, config.lam, config.lam0)
        new = np.column_stack([
            solve_weighted_lasso(t.X, t.y, omegas[k], w, lasso_cfgs[k], init=coef[:, k], gram=grams[k])
            for k, t in enumerate(dataset.tasks)])
        weights = [w] * K
        change = np.max(np.abs(new - coef)) if new.size else 0.0
        coef = new
        history.append(reformulated_objective(coef, dataset, omegas, config.lam, ridges))
        if keep_iterates:
            iterates.append(coef.copy())
        if change < config.outer_tol:
            converged = True
            break
    if not converged:
        raise NonConvergence(f"outer loop did not converge in {config.max_outer} iterations",
                             iterate=coef, history=history)

    outcome = _outcome_from_solution(dataset, coef, weights, omegas, scales, ridges, config.lasso,
                                     lam=config.lam, lam0=config.lam0, n_outer=it,
                                     objective_history=history,
                                     iterates=tuple(iterates) if keep_iterates else ())
    return outcome


def run_lasso_selection(dataset, spec: RandomizationSpec, lam, lasso: LassoConfig = LassoConfig(),
                        omegas=None):
    """Separate randomized LASSO per task at the uniform weight ``lam``."""
    p = dataset.p
    if omegas is None:
        omegas, scales = draw_omegas(dataset, spec)
    else:
        scales = [spec.scale * (1.0 if t.sigma is None else t.sigma) for t in dataset.tasks]
    ridges = [lasso.ridge_for(t.X) for t in dataset.tasks]
    coef = np.column_stack([
        solve_weighted_lasso(t.X, t.y, omegas[k], np.full(p, lam),
                             LassoConfig(ridge=ridges[k], tol=lasso.tol, max_iter=lasso.max_iter))
        for k, t in enumerate(dataset.tasks)])
    weights = [np.full(p, float(lam))] * dataset.K
    return _outcome_from_solution(dataset, coef, weights, omegas, scales, ridges, lasso,
                                  lam=float(lam), lam0=float("nan"), n_outer=0)
