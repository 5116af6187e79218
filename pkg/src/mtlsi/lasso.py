"""Randomized, feature-weighted LASSO.

Minimizes, for a single task::

    1/2 ||y - X theta||^2 - omega' theta + eps/2 ||theta||^2 + sum_j lam_j |theta_j|

by cyclic coordinate descent on the Gram matrix, interleaved with
feature-sign steps: the linear system for the current support and signs is
solved directly and followed up to the first sign change. This settles the
support in finitely many steps even when the ridge term is tiny and the
support is larger than the sample size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import KktViolation, NonConvergence


@dataclass(frozen=True)
class LassoConfig:
    ridge: Optional[float] = None  # None: 1e-4 * mean(diag(X'X))
    tol: float = 1e-8
    max_iter: int = 5000

    def __post_init__(self):
        if self.ridge is not None and not self.ridge > 0:
            raise ValueError("ridge must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def ridge_for(self, X):
        if self.ridge is not None:
            return float(self.ridge)
        return 1e-4 * float(np.mean(np.einsum("ij,ij->j", X, X)))


def sample_randomization(p, spec, task, sigma=1.0):
    """Draw omega for ``task``; reproducible from ``(spec.seed, task)``."""
    if spec.scale == 0:
        return np.zeros(p)
    rng = np.random.default_rng([spec.seed, task])
    return spec.scale * sigma * rng.standard_normal(p)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_objective(X, y, omega, weights, ridge, theta):
    resid = y - X @ theta
    return (0.5 * resid @ resid - omega @ theta + 0.5 * ridge * theta @ theta
            + np.sum(weights * np.abs(theta)))


def _kkt_residual(score, theta, weights):
    """Max violation of ``score = weights * subgradient`` (score = X'y + omega - (G + eps) theta)."""
    active = theta != 0
    viol = np.zeros_like(score)
    viol[active] = np.abs(score[active] - weights[active] * np.sign(theta[active]))
    viol[~active] = np.maximum(np.abs(score[~active]) - weights[~active], 0.0)
    return float(viol.max()) if viol.size else 0.0


def _sweep(G, score, theta, weights, ridge, denom, coords):
    """One cyclic pass of closed-form coordinate updates; returns the largest move."""
    biggest = 0.0
    for j in coords:
        old = theta[j]
        c = score[j] + denom[j] * old
        new = np.sign(c) * max(abs(c) - weights[j], 0.0) / denom[j]
        if new != old:
            delta = new - old
            theta[j] = new
            score -= G[:, j] * delta
            score[j] -= ridge * delta
            biggest = max(biggest, abs(delta) * denom[j])
    return biggest


def _quad_objective(G, xty, weights, ridge, theta):
    return 0.5 * theta @ (G @ theta) + 0.5 * ridge * theta @ theta - xty @ theta + weights @ np.abs(theta)


def _feature_sign_step(G, xty, weights, ridge, theta):
    """Move toward the minimizer for the current support and signs.

    Solves the linear system on the support with the signs held fixed, then
    takes the best point among the full step and each zero crossing along
    the way. Coordinates that cross zero are dropped. Returns the new
    iterate and whether the full step was taken, or ``None`` if nothing improves.
    """
    support = np.flatnonzero(theta)
    if support.size == 0:
        return None
    s = np.sign(theta[support])
    A = G[np.ix_(support, support)] + ridge * np.eye(support.size)
    try:
        sol = np.linalg.solve(A, xty[support] - weights[support] * s)
    except np.linalg.LinAlgError:
        return None
    start = theta[support]
    d = sol - start
    with np.errstate(divide="ignore", invalid="ignore"):
        crossing = -start / d
    steps = sorted({1.0} | {float(t) for t in crossing[np.sign(sol) != s] if 0 < t < 1})
    best, best_val, full = None, _quad_objective(G, xty, weights, ridge, theta), False
    for t in steps:
        cand = np.zeros_like(theta)
        vals = start + t * d
        vals[np.sign(vals) != s] = 0.0
        if t < 1:
            vals[np.abs(t - crossing) <= 1e-12] = 0.0
        cand[support] = vals
        val = _quad_objective(G, xty, weights, ridge, cand)
        if val < best_val:
            best, best_val, full = cand, val, t == 1.0 and np.array_equal(np.sign(sol), s)
    return None if best is None else (best, full)


def _cd(G, xty, weights, ridge, theta, tol, max_iter, gram_diag, support_sweeps=10):
    """Coordinate descent on the quadratic form; returns (theta, sweeps, residual).

    Each full sweep lets new coordinates enter; feature-sign steps then
    settle the support and signs, and plain sweeps over the support are
    the fallback when no such step helps.
    """
    p = theta.size
    denom = gram_diag + ridge
    all_coords = range(p)
    sweeps = 0
    residual = np.inf
    while sweeps < max_iter:
        _sweep(G, xty - G @ theta - ridge * theta, theta, weights, ridge, denom, all_coords)
        sweeps += 1
        score = xty - G @ theta - ridge * theta
        residual = _kkt_residual(score, theta, weights)
        if residual <= tol:
            break
        for _ in range(support_sweeps):
            step = _feature_sign_step(G, xty, weights, ridge, theta)
            if step is None:
                break
            theta[:] = step[0]
            if step[1]:
                break
        score = xty - G @ theta - ridge * theta
        residual = _kkt_residual(score, theta, weights)
        if residual <= tol:
            break
        support = np.flatnonzero(theta)
        for _ in range(support_sweeps):
            if support.size == 0 or sweeps >= max_iter:
                break
            moved = _sweep(G, score, theta, weights, ridge, denom, support)
            sweeps += 1
            if moved <= 0.1 * tol:
                break
    return theta, sweeps, residual


def solve_weighted_lasso(X, y, omega, weights, config: LassoConfig = LassoConfig(),
                         init=None, gram=None):
    """Solve the randomized weighted LASSO; returns the coefficient vector.

    ``gram`` may carry a precomputed ``X'X``; ``init`` warm-starts the
    iteration (the minimizer is unique, so this only affects run time).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    weights = np.broadcast_to(np.asarray(weights, dtype=float), (p,)).copy()
    if np.any(weights <= 0):
        raise ValueError("penalty weights must be positive")
    G = X.T @ X if gram is None else gram
    ridge = config.ridge_for(X)
    xty = X.T @ y + np.asarray(omega, dtype=float)
    theta = np.zeros(p) if init is None else np.array(init, dtype=float)
    theta, sweeps, residual = _cd(G, xty, weights, ridge, theta, config.tol, config.max_iter,
                                  np.diag(G).copy())
    if residual > config.tol:
        raise NonConvergence(f"coordinate descent stopped after {sweeps} sweeps "
                             f"with KKT residual {residual:.3e}", iterate=theta, residual=residual)
    return theta


def kkt_decompose(X, y, omega, weights, ridge, theta, tol=1e-8):
    """Split the stationarity condition at ``theta`` into signs and inactive subgradient.

    Returns ``(signs, u, residual)`` where ``signs`` are on the support in
    ascending feature order and ``u`` is on the complement.
    """
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), theta.shape)
    score = X.T @ (y - X @ theta) + omega - ridge * theta
    active = theta != 0
    signs = np.sign(theta[active])
    u = score[~active] / weights[~active]
    residual = _kkt_residual(score, theta, weights)
    if residual > 10 * tol:
        raise KktViolation(residual, tol)
    return signs, u, residual
