"""Summaries for fitted models: overlap of significant sets, precision of estimates, back-projection."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatch


def significant_sets(intervals, K):
    """Per task, the features whose interval excludes zero."""
    sets = [set() for _ in range(K)]
    for k, j in intervals.significant():
        sets[k].add(j)
    return sets


def jaccard(a, b):
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def report_jaccard(sets):
    """Symmetric K x K Jaccard matrix; two empty sets score 0."""
    K = len(sets)
    out = np.zeros((K, K))
    for i in range(K):
        for j in range(i, K):
            out[i, j] = out[j, i] = jaccard(sets[i], sets[j])
    return out


def report_cv(estimate, inv_info):
    """Standard error over absolute estimate; ``inf`` where the estimate is zero.

    ``inv_info`` may be the inverse information matrix or a vector of
    standard errors.
    """
    estimate = np.asarray(estimate, dtype=float)
    inv_info = np.asarray(inv_info, dtype=float)
    se = np.sqrt(np.diag(inv_info)) if inv_info.ndim == 2 else inv_info
    if se.shape != estimate.shape:
        raise DimensionMismatch(f"{se.size} standard errors for {estimate.size} estimates")
    out = np.full(estimate.shape, np.inf)
    nz = estimate != 0
    out[nz] = se[nz] / np.abs(estimate[nz])
    return out


def project_to_original(loadings, theta):
    """Map coefficients on derived features back to the original ones: ``loadings @ theta``."""
    loadings = np.asarray(loadings, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if loadings.ndim != 2 or theta.ndim != 1 or loadings.shape[1] != theta.size:
        raise DimensionMismatch(f"loadings of shape {loadings.shape} cannot map {theta.size} coefficients")
    return loadings @ theta
