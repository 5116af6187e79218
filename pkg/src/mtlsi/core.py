"""Datasets, selection outcomes and the cross-task stacking bookkeeping.

Stacked magnitudes ``B`` are ordered task-major: task 0's active
coefficients first (ascending feature index), then task 1, and so on.
For every predictor ``j`` active somewhere, ``V`` holds its magnitudes in
all active tasks except the last one (largest task index), and
``gamma[j]`` is the sum of all its magnitudes. Then::

    B = A @ concat(V, gamma - D @ V)

for a fixed permutation ``A`` and 0/1 selector ``D``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DimensionMismatch, EmptySelection, InconsistentSigns, ShapeMismatch

CENTER_TOL = 1e-8


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Task:
    X: np.ndarray
    y: np.ndarray
    sigma: Optional[float] = None  # None means "estimate by plug-in"

    @property
    def n(self):
        return self.X.shape[0]


@dataclass(frozen=True)
class MultiTaskDataset:
    """K regression tasks sharing ``p`` column-centered features."""

    tasks: tuple

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise ShapeMismatch("a dataset needs at least one task")
        p = tasks[0].X.shape[1] if tasks[0].X.ndim == 2 else None
        for k, t in enumerate(tasks):
            if t.X.ndim != 2 or t.X.shape[1] != p:
                raise ShapeMismatch(f"task {k}: design must be n x {p}, got {t.X.shape}")
            if t.y.ndim != 1 or t.y.shape[0] != t.X.shape[0]:
                raise ShapeMismatch(f"task {k}: X has {t.X.shape[0]} rows but y has shape {t.y.shape}")
            if t.X.shape[0] < 1:
                raise ShapeMismatch(f"task {k}: n_k = 0")
            if not np.all(np.abs(t.X.mean(axis=0)) <= CENTER_TOL * max(1.0, np.abs(t.X).max())):
                raise ShapeMismatch(f"task {k}: design columns are not centered")
            if t.sigma is not None and not t.sigma > 0:
                raise ValueError(f"task {k}: sigma must be positive")
        object.__setattr__(self, "tasks", tasks)

    @classmethod
    def from_arrays(cls, Xs, ys, sigmas=None, center=True):
        """Build a dataset, centering each design's columns unless ``center=False``."""
        if len(Xs) != len(ys):
            raise ShapeMismatch(f"{len(Xs)} designs but {len(ys)} responses")
        if sigmas is None:
            sigmas = [None] * len(Xs)
        elif np.isscalar(sigmas):
            sigmas = [float(sigmas)] * len(Xs)
        tasks = []
        for X, y, s in zip(Xs, ys, sigmas):
            X = np.array(X, dtype=float)
            if center and X.ndim == 2 and X.shape[0] > 0:
                X = X - X.mean(axis=0)
            tasks.append(Task(_frozen(X), _frozen(np.ravel(y)), None if s is None else float(s)))
        return cls(tuple(tasks))

    @property
    def K(self):
        return len(self.tasks)

    @property
    def p(self):
        return self.tasks[0].X.shape[1]

    @property
    def sigmas(self):
        return [t.sigma for t in self.tasks]

    def with_sigmas(self, sigmas):
        return MultiTaskDataset(tuple(Task(t.X, t.y, float(s)) for t, s in zip(self.tasks, sigmas)))

    def subset(self, indices, center=True):
        """Row-subset every task (``indices[k]`` selects rows of task k)."""
        return MultiTaskDataset.from_arrays(
            [t.X[idx] for t, idx in zip(self.tasks, indices)],
            [t.y[idx] for t, idx in zip(self.tasks, indices)],
            self.sigmas, center=center)


@dataclass(frozen=True)
class RandomizationSpec:
    """Gaussian randomizer ``omega_k ~ N(0, scale**2 * sigma_k**2 * I)``."""

    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("randomizer scale must be nonnegative")

    def covariance(self, p, sigma):
        return (self.scale * sigma) ** 2 * np.eye(p)


@dataclass(frozen=True)
class TaskSelection:
    """What the selection step leaves behind for one task."""

    active: np.ndarray      # ascending feature indices E_k
    signs: np.ndarray       # s^(k), +-1 on E_k
    magnitudes: np.ndarray  # b^(k) > 0
    subgrad: np.ndarray     # u^(k) on the complement of E_k
    weights: np.ndarray     # penalty weights (length p) used in the last solve
    omega: np.ndarray       # randomization draw (length p)
    coef: np.ndarray        # full coefficient vector (length p)
    ridge: float
    omega_scale: float = 0.0  # standard deviation of each omega entry

    def __post_init__(self):
        for name, dt in (("active", int), ("signs", float), ("magnitudes", float),
                         ("subgrad", float), ("weights", float), ("omega", float), ("coef", float)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))

    @property
    def q(self):
        return self.active.size

    @property
    def inactive(self):
        return np.setdiff1d(np.arange(self.coef.size), self.active)

    def subgradient_full(self):
        """The full l1 subgradient: signs on E_k, u elsewhere."""
        z = np.empty(self.coef.size)
        z[self.active] = self.signs
        z[self.inactive] = self.subgrad
        return z


@dataclass(frozen=True)
class SelectionOutcome:
    tasks: tuple
    lam: float = float("nan")
    lam0: float = float("nan")
    n_outer: int = 0
    objective_history: tuple = ()
    iterates: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "objective_history", tuple(float(v) for v in self.objective_history))

    @property
    def K(self):
        return len(self.tasks)

    @property
    def p(self):
        return self.tasks[0].coef.size

    @property
    def q(self):
        return sum(t.q for t in self.tasks)

    @property
    def coef(self):
        """Coefficient matrix, p x K."""
        return np.column_stack([t.coef for t in self.tasks])

    @property
    def active_sets(self):
        return [t.active for t in self.tasks]

    def stacked(self, name):
        return np.concatenate([np.asarray(getattr(t, name), dtype=float) for t in self.tasks])

    def labels(self):
        """(task, feature) for every stacked coordinate, task-major."""
        return [(k, int(j)) for k, t in enumerate(self.tasks) for j in t.active]

    def check(self, tol=0.0):
        """Raise if the stored outcome violates its invariants."""
        for k, t in enumerate(self.tasks):
            if np.any(t.magnitudes <= 0):
                raise InconsistentSigns(f"task {k}: nonpositive magnitude")
            if t.subgrad.size and np.max(np.abs(t.subgrad)) >= 1 + tol:
                raise InconsistentSigns(f"task {k}: inactive subgradient outside (-1, 1)")
            if not np.array_equal(np.sign(t.coef[t.active]), t.signs):
                raise InconsistentSigns(f"task {k}: signs disagree with coefficients")
            if np.any(t.coef[t.inactive] != 0):
                raise InconsistentSigns(f"task {k}: nonzero coefficient outside the active set")


@dataclass(frozen=True)
class StackingPlan:
    features: np.ndarray      # active union j_1 < ... < j_r
    multiplicity: np.ndarray  # d_j
    kappa: tuple              # kappa[i] = tasks where features[i] is active (ascending)
    labels: tuple             # (task, feature) per stacked B coordinate
    gamma: np.ndarray
    V: np.ndarray
    D: np.ndarray
    A: np.ndarray
    H: np.ndarray
    g: np.ndarray
    _perm: np.ndarray = field(repr=False, default=None)  # B[_perm[i]] = (V; gamma - D V)[i]

    @property
    def q(self):
        return len(self.labels)

    @property
    def r(self):
        return self.features.size

    @property
    def A1(self):
        return self.A[:, : self.q - self.r]

    @property
    def A2(self):
        return self.A[:, self.q - self.r:]


def build_stacking_plan(outcome: SelectionOutcome) -> StackingPlan:
    if outcome.q == 0:
        raise EmptySelection("no task selected any feature")
    for k, t in enumerate(outcome.tasks):
        if np.any(t.magnitudes <= 0):
            raise InconsistentSigns(f"task {k}: nonpositive magnitude")

    labels = outcome.labels()
    position = {lab: i for i, lab in enumerate(labels)}
    B = outcome.stacked("magnitudes")
    features = np.unique(np.concatenate([t.active for t in outcome.tasks]))
    kappa = tuple(tuple(k for k, t in enumerate(outcome.tasks) if j in set(t.active.tolist()))
                  for j in features)
    mult = np.array([len(kp) for kp in kappa], dtype=int)
    q, r = len(labels), features.size

    v_pos = [position[(k, int(j))] for j, kp in zip(features, kappa) for k in kp[:-1]]
    last_pos = [position[(kp[-1], int(j))] for j, kp in zip(features, kappa)]
    perm = np.array(v_pos + last_pos, dtype=int)

    A = np.zeros((q, q))
    A[perm, np.arange(q)] = 1.0
    D = np.zeros((r, q - r))
    start = 0
    for i, d in enumerate(mult):
        D[i, start:start + d - 1] = 1.0
        start += d - 1

    V = B[perm[: q - r]]
    gamma = B[perm[q - r:]] + D @ V
    H = np.vstack([np.eye(q - r), -D])
    g = np.concatenate([np.zeros(q - r), -gamma])
    return StackingPlan(_frozen(features, int), _frozen(mult, int), kappa, tuple(labels),
                        _frozen(gamma), _frozen(V), _frozen(D), _frozen(A), _frozen(H), _frozen(g),
                        _frozen(perm, int))


def b_to_vgamma(B, plan: StackingPlan):
    B = np.asarray(B, dtype=float)
    if B.shape != (plan.q,):
        raise DimensionMismatch(f"expected {plan.q} stacked magnitudes, got shape {B.shape}")
    nv = plan.q - plan.r
    V = B[plan._perm[:nv]]
    gamma = B[plan._perm[nv:]] + plan.D @ V
    return V, gamma


def vgamma_to_b(V, gamma, plan: StackingPlan):
    V = np.asarray(V, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if V.shape != (plan.q - plan.r,) or gamma.shape != (plan.r,):
        raise DimensionMismatch(
            f"expected V of length {plan.q - plan.r} and gamma of length {plan.r}, "
            f"got {V.shape} and {gamma.shape}")
    B = np.empty(plan.q)
    B[plan._perm] = np.concatenate([V, gamma - plan.D @ V])
    return B
