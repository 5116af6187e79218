"""Approximate selective maximum-likelihood inference after selection.

Conditioning on the selected supports, signs, the per-predictor magnitude
sums ``gamma`` and the inactive subgradients leaves the stacked randomization
an affine function of the least-squares estimates and of the free magnitudes
``V``::

    omega = C1 @ beta_hat + C2 @ V + f

The conditional law of ``(beta_hat, V)`` is Gaussian restricted to
``H V >= g``. Replacing the normalizer by the mode of its integrand gives
closed-form estimating equations once the barrier problem for ``V`` is
solved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .core import SelectionOutcome, StackingPlan, build_stacking_plan
from .exceptions import (DegreesOfFreedomExhausted, InfeasibleStart, NonConvergence,
                         NotPositiveDefinite, RankDeficient, SingularDelta)


# ---------------------------------------------------------------------------
# least squares pieces

def _check_rank(XE, task):
    if XE.shape[1] == 0:
        return
    _, R, piv = linalg.qr(XE, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > diag[0] * max(XE.shape) * np.finfo(float).eps))
    if rank < XE.shape[1]:
        raise RankDeficient(task, sorted(piv[rank:].tolist()))


def least_squares_and_ancillary(dataset, active_sets):
    """Per-task least squares on the selected columns and the ancillary projections.

    Returns the stacked ``beta_hat`` (task-major, length q) and stacked
    ``beta_perp`` (length K*p) with ``X'y = X'X_E beta_hat + beta_perp`` per task.
    """
    beta_hat, beta_perp = [], []
    for k, (t, E) in enumerate(zip(dataset.tasks, active_sets)):
        XE = t.X[:, E]
        _check_rank(XE, k)
        if XE.shape[1]:
            b, *_ = linalg.lstsq(XE, t.y)
        else:
            b = np.zeros(0)
        beta_hat.append(b)
        beta_perp.append(t.X.T @ (t.y - XE @ b))
    return np.concatenate(beta_hat), np.concatenate(beta_perp)


def plugin_sigma(XE, y):
    """Residual standard deviation of the least-squares fit on ``XE``."""
    XE = np.asarray(XE, dtype=float).reshape(len(y), -1)
    n, q = XE.shape
    if n <= q:
        raise DegreesOfFreedomExhausted(f"n = {n} observations for {q} selected features")
    if q:
        b, *_ = linalg.lstsq(XE, y)
        resid = y - XE @ b
    else:
        resid = np.asarray(y, dtype=float)
    return float(np.sqrt(resid @ resid / (n - q)))


def resolve_sigmas(dataset, outcome, sigmas=None):
    if sigmas is None:
        sigmas = dataset.sigmas
    return [plugin_sigma(t.X[:, sel.active], t.y) if s is None else float(s)
            for t, sel, s in zip(dataset.tasks, outcome.tasks, sigmas)]


# ---------------------------------------------------------------------------
# barrier

def barrier(V, H, g):
    """``sum_j log(1 + 1/(H_j V - g_j))`` with its gradient and Hessian.

    Outside ``H V > g`` returns ``(inf, None, None)``.
    """
    V = np.asarray(V, dtype=float)
    slack = H @ V - g
    if np.any(slack <= 0):
        return np.inf, None, None
    value = float(np.sum(np.log1p(1.0 / slack)))
    d1 = -1.0 / (slack * (slack + 1.0))
    d2 = (2.0 * slack + 1.0) / (slack ** 2 * (slack + 1.0) ** 2)
    return value, H.T @ d1, (H.T * d2) @ H


# ---------------------------------------------------------------------------
# matrices

@dataclass(frozen=True)
class InferenceMatrices:
    labels: tuple
    C0: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    f: np.ndarray
    omega_prec: np.ndarray  # diagonal of the inverse randomization covariance
    omega: np.ndarray       # observed stacked randomization
    Delta_inv: np.ndarray
    Delta: np.ndarray
    P: np.ndarray
    q_vec: np.ndarray
    Sigma_inv: np.ndarray
    Sigma: np.ndarray
    L: np.ndarray
    m: np.ndarray
    psi_inv: np.ndarray     # inverse of the unconditional covariance of beta_hat
    beta_hat: np.ndarray
    beta_perp: np.ndarray
    sigmas: tuple
    H: np.ndarray
    g: np.ndarray
    V_obs: np.ndarray

    @property
    def n_params(self):
        return self.beta_hat.size

    def forward_map(self, V=None):
        """Randomization implied by ``(beta_hat, V)`` under the conditioning."""
        V = self.V_obs if V is None else V
        return self.C1 @ self.beta_hat + self.C2 @ V + self.f


def _cholesky(M, name):
    try:
        return linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefinite(name) from None


def _selection_blocks(dataset, outcome, sigmas):
    """Per-task blocks shared by the multi-task and single-task conditionings."""
    p = dataset.p
    q = outcome.q
    K = dataset.K
    C1 = np.zeros((K * p, q))
    C0 = np.zeros((K * p, q))
    psi_inv = np.zeros((q, q))
    signs = outcome.stacked("signs")
    penalty = np.zeros(K * p)
    prec = np.zeros(K * p)
    col = 0
    for k, (t, sel) in enumerate(zip(dataset.tasks, outcome.tasks)):
        if not sel.omega_scale > 0:
            raise ValueError(f"task {k}: selective inference needs a positive randomizer scale")
        rows = slice(k * p, (k + 1) * p)
        cols = slice(col, col + sel.q)
        XtXE = t.X.T @ t.X[:, sel.active]
        C1[rows, cols] = -XtXE
        C0[rows, cols] = XtXE
        C0[k * p + sel.active, np.arange(col, col + sel.q)] += sel.ridge
        psi_inv[cols, cols] = XtXE[sel.active] / sigmas[k] ** 2
        penalty[rows] = sel.weights * sel.subgradient_full()
        prec[rows] = 1.0 / sel.omega_scale ** 2
        col += sel.q
    return C1, C0, signs, psi_inv, penalty, prec


def _conditional_law(labels, C0, C1, C2, f, prec, psi_inv, beta_hat, beta_perp, sigmas,
                     H, g, V_obs, omega):
    nv = C2.shape[1]
    W1 = C1 * prec[:, None]
    if nv:
        Delta_inv = C2.T @ (C2 * prec[:, None])
        Delta_inv = 0.5 * (Delta_inv + Delta_inv.T)
        try:
            cD = linalg.cho_factor(Delta_inv, lower=True)
        except linalg.LinAlgError:
            raise SingularDelta("C2 is rank deficient; the conditioning plan is degenerate") from None
        if np.linalg.cond(Delta_inv) > 1e14:
            raise SingularDelta("C2 is numerically rank deficient")
        Delta = linalg.cho_solve(cD, np.eye(nv))
        P = -linalg.cho_solve(cD, C2.T @ W1)
        q_vec = -linalg.cho_solve(cD, C2.T @ (prec * f))
    else:
        Delta_inv = Delta = np.zeros((0, 0))
        P = np.zeros((0, C1.shape[1]))
        q_vec = np.zeros(0)
    Sigma_inv = psi_inv + C1.T @ W1 - P.T @ Delta_inv @ P
    Sigma_inv = 0.5 * (Sigma_inv + Sigma_inv.T)
    cS = _cholesky(Sigma_inv, "Sigma_inv")
    Sigma = linalg.cho_solve(cS, np.eye(Sigma_inv.shape[0]))
    Sigma = 0.5 * (Sigma + Sigma.T)
    L = Sigma @ psi_inv
    m = Sigma @ (P.T @ Delta_inv @ q_vec - W1.T @ f)
    return InferenceMatrices(
        labels=tuple(labels), C0=C0, C1=C1, C2=C2, f=f, omega_prec=prec, omega=omega,
        Delta_inv=Delta_inv, Delta=Delta, P=P, q_vec=q_vec, Sigma_inv=Sigma_inv, Sigma=Sigma,
        L=L, m=m, psi_inv=psi_inv, beta_hat=beta_hat, beta_perp=beta_perp, sigmas=tuple(sigmas),
        H=H, g=g, V_obs=V_obs)


def assemble_inference_matrices(dataset, outcome: SelectionOutcome, plan: StackingPlan = None,
                                sigmas=None) -> InferenceMatrices:
    """Conditional-likelihood ingredients for the multi-task selection.

    ``sigmas`` fixes the noise levels; ``None`` entries (and tasks whose
    dataset sigma is unknown) use the plug-in estimate.
    """
    plan = build_stacking_plan(outcome) if plan is None else plan
    sigmas = resolve_sigmas(dataset, outcome, sigmas)
    beta_hat, beta_perp = least_squares_and_ancillary(dataset, outcome.active_sets)
    C1, C0, signs, psi_inv, penalty, prec = _selection_blocks(dataset, outcome, sigmas)
    C0S = C0 * signs[None, :]
    C2 = C0S @ (plan.A1 - plan.A2 @ plan.D)
    f = penalty + C0S @ (plan.A2 @ plan.gamma) - beta_perp
    return _conditional_law(plan.labels, C0, C1, C2, f, prec, psi_inv, beta_hat, beta_perp,
                            sigmas, np.asarray(plan.H), np.asarray(plan.g),
                            np.asarray(plan.V), outcome.stacked("omega"))


def assemble_single_task_matrices(dataset, outcome: SelectionOutcome, sigmas=None):
    """Ingredients when only supports, signs and inactive subgradients are fixed.

    The free variables are all active magnitudes ``b > 0`` (the usual
    randomized-LASSO conditioning, applied task by task).
    """
    if outcome.q == 0:
        from .exceptions import EmptySelection
        raise EmptySelection("no task selected any feature")
    sigmas = resolve_sigmas(dataset, outcome, sigmas)
    beta_hat, beta_perp = least_squares_and_ancillary(dataset, outcome.active_sets)
    C1, C0, signs, psi_inv, penalty, prec = _selection_blocks(dataset, outcome, sigmas)
    C2 = C0 * signs[None, :]
    f = penalty - beta_perp
    q = outcome.q
    return _conditional_law(outcome.labels(), C0, C1, C2, f, prec, psi_inv, beta_hat, beta_perp,
                            sigmas, np.eye(q), np.zeros(q), outcome.stacked("magnitudes"),
                            outcome.stacked("omega"))


# ---------------------------------------------------------------------------
# optimization and estimating equations

@dataclass(frozen=True)
class RestrictedSolution:
    V: np.ndarray
    iterations: int
    grad_norm: float


def _restricted_objective(V, center, Delta_inv, H, g, use_barrier):
    diff = V - center
    quad_grad = Delta_inv @ diff
    val = 0.5 * diff @ quad_grad
    if not use_barrier:
        return val, quad_grad, Delta_inv.copy(), 1.0 + np.linalg.norm(quad_grad)
    b, bg, bh = barrier(V, H, g)
    if not np.isfinite(b):
        return np.inf, None, None, None
    # scale of the two terms that cancel at the optimum
    scale = 1.0 + np.linalg.norm(quad_grad) + np.linalg.norm(bg)
    return val + b, quad_grad + bg, Delta_inv + bh, scale


def solve_restricted_optimizer(mats: InferenceMatrices, use_barrier=True, tol=1e-8,
                               max_iter=500, start=None) -> RestrictedSolution:
    """Minimize ``1/2 (V - P b - q)' Delta^-1 (V - P b - q) + barrier(V)``.

    Damped Newton from the observed ``V``; each step is halved until it stays
    strictly feasible and decreases the objective. Falls back to a gradient
    step when the Newton system cannot be factored. Converged when the
    gradient norm is below ``tol`` relative to ``1 + |quadratic part| + |barrier part|``.
    """
    nv = mats.Delta_inv.shape[0]
    center = mats.P @ mats.beta_hat + mats.q_vec
    if nv == 0:
        return RestrictedSolution(np.zeros(0), 0, 0.0)
    if not use_barrier:
        return RestrictedSolution(center.copy(), 0, 0.0)

    V = np.array(mats.V_obs if start is None else start, dtype=float)
    if np.any(mats.H @ V - mats.g <= 0):
        raise InfeasibleStart("starting point violates H V > g")
    val, grad, hess, scale = _restricted_objective(V, center, mats.Delta_inv, mats.H, mats.g, True)
    gnorm = float(np.linalg.norm(grad))
    for it in range(max_iter + 1):
        if gnorm <= tol * scale:
            return RestrictedSolution(V, it, gnorm)
        if it == max_iter:
            break
        try:
            if np.linalg.cond(hess) > 1e14:
                raise linalg.LinAlgError
            step = -linalg.cho_solve(linalg.cho_factor(hess, lower=True), grad)
        except linalg.LinAlgError:
            step = -grad / max(np.linalg.norm(hess, 2), 1.0)
        slope = grad @ step
        t = 1.0
        while t >= 1e-20:
            trial = V + t * step
            tval, tgrad, thess, tscale = _restricted_objective(trial, center, mats.Delta_inv,
                                                              mats.H, mats.g, True)
            if np.isfinite(tval) and tval <= val + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        V, val, grad, hess, scale = trial, tval, tgrad, thess, tscale
        gnorm = float(np.linalg.norm(grad))
    raise NonConvergence(f"barrier solve stopped with gradient norm {gnorm:.3e}",
                         iterate=V, residual=gnorm)


def selective_mle(mats: InferenceMatrices, V_hat):
    """Approximate selective MLE and inverse observed information."""
    V_hat = np.asarray(V_hat, dtype=float)
    P, Dinv = mats.P, mats.Delta_inv
    lu = linalg.lu_factor(mats.L)
    if V_hat.size:
        resid = P @ mats.beta_hat + mats.q_vec - V_hat
        rhs = mats.beta_hat + mats.Sigma @ (P.T @ (Dinv @ resid)) - mats.m
        _, _, hphi = barrier(V_hat, mats.H, mats.g)
        if hphi is None:
            raise InfeasibleStart("V_hat is outside the selection region")
        DP = Dinv @ P
        corr = P.T @ DP - DP.T @ linalg.solve(Dinv + hphi, DP, assume_a="pos")
    else:
        rhs = mats.beta_hat - mats.m
        corr = np.zeros((mats.n_params, mats.n_params))
    mle = linalg.lu_solve(lu, rhs)
    W = linalg.lu_solve(lu, mats.Sigma)  # L^-1 Sigma
    inv_info = linalg.lu_solve(lu, W.T) + W @ corr @ W.T
    inv_info = 0.5 * (inv_info + inv_info.T)
    _cholesky(inv_info, "inverse information")
    return mle, inv_info


# ---------------------------------------------------------------------------
# results

@dataclass(frozen=True)
class Intervals:
    labels: tuple
    estimate: np.ndarray
    stderr: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    method: str = "MTL+SI"

    def __len__(self):
        return len(self.labels)

    @property
    def length(self):
        return self.upper - self.lower

    def significant(self):
        """Labels whose interval excludes zero."""
        keep = (self.lower > 0) | (self.upper < 0)
        return [lab for lab, s in zip(self.labels, keep) if s]

    def covers(self, values):
        values = np.asarray(values, dtype=float)
        return (self.lower <= values) & (values <= self.upper)

    @classmethod
    def empty(cls, alpha, method="MTL+SI"):
        z = np.zeros(0)
        return cls((), z, z, z, z, alpha, method)


def z_intervals(labels, estimate, stderr, alpha, method):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    estimate = np.asarray(estimate, dtype=float)
    stderr = np.asarray(stderr, dtype=float)
    z = norm.ppf(1 - alpha / 2)
    return Intervals(tuple(labels), estimate, stderr, estimate - z * stderr,
                     estimate + z * stderr, float(alpha), method)


@dataclass(frozen=True)
class InferenceResult:
    labels: tuple
    mle: np.ndarray
    inv_info: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    method: str = "MTL+SI"

    @property
    def stderr(self):
        return np.sqrt(np.diag(self.inv_info))

    def intervals(self, alpha=0.1):
        return confidence_intervals(self, alpha)

    @classmethod
    def empty(cls, method="MTL+SI"):
        return cls((), np.zeros(0), np.zeros((0, 0)), {"barrier_iterations": 0, "grad_norm": 0.0},
                   method)


def confidence_intervals(result: InferenceResult, alpha) -> Intervals:
    return z_intervals(result.labels, result.mle, result.stderr, alpha, result.method)


def _infer(mats, method):
    sol = solve_restricted_optimizer(mats)
    mle, inv_info = selective_mle(mats, sol.V)
    return InferenceResult(mats.labels, mle, inv_info,
                           {"barrier_iterations": sol.iterations, "grad_norm": sol.grad_norm},
                           method)


def infer_mtl(dataset, outcome: SelectionOutcome, sigmas=None, method="MTL+SI") -> InferenceResult:
    """Selective MLE and inverse information after the multi-task selection."""
    if outcome.q == 0:
        return InferenceResult.empty(method)
    mats = assemble_inference_matrices(dataset, outcome, sigmas=sigmas)
    return _infer(mats, method)


def infer_single_task(dataset, outcome: SelectionOutcome, sigmas=None,
                      method="LASSO+SI") -> InferenceResult:
    """Selective MLE conditioning on supports, signs and subgradients only."""
    if outcome.q == 0:
        return InferenceResult.empty(method)
    mats = assemble_single_task_matrices(dataset, outcome, sigmas=sigmas)
    return _infer(mats, method)


# ---------------------------------------------------------------------------
# change-of-variables diagnostic

def penalty_weights_from_magnitudes(outcome, B, lam, lam0):
    """Weights implied by stacked magnitudes ``B``: ``min(lam0, lam / sqrt(gamma_j))``."""
    p = outcome.p
    total = np.zeros(p)
    for (k, j), b in zip(outcome.labels(), B):
        total[j] += b
    with np.errstate(divide="ignore"):
        raw = np.where(total > 0, lam / np.sqrt(np.where(total > 0, total, 1.0)), np.inf)
    return np.minimum(lam0, raw), total


def stationarity_map(dataset, outcome, B, U, lam, lam0):
    """Stacked randomization reproduced from magnitudes ``B`` and subgradients ``U``.

    The penalty weights are recomputed from ``B``, so the map is nonlinear.
    """
    weights, _ = penalty_weights_from_magnitudes(outcome, B, lam, lam0)
    out = []
    b_at = u_at = 0
    for t, sel in zip(dataset.tasks, outcome.tasks):
        theta = np.zeros(dataset.p)
        theta[sel.active] = sel.signs * B[b_at:b_at + sel.q]
        z = np.empty(dataset.p)
        z[sel.active] = sel.signs
        n_in = dataset.p - sel.q
        z[sel.inactive] = U[u_at:u_at + n_in]
        out.append(-t.X.T @ t.y + t.X.T @ (t.X @ theta) + sel.ridge * theta + weights * z)
        b_at += sel.q
        u_at += n_in
    return np.concatenate(out)


def jacobian_determinant(outcome, dataset, lam, lam0):
    """``det(Q) * det(R + T)`` for the map from ``(B, U)`` to the randomization."""
    B = outcome.stacked("magnitudes")
    weights, gamma = penalty_weights_from_magnitudes(outcome, B, lam, lam0)
    labels = outcome.labels()
    signs = outcome.stacked("signs")
    q = len(labels)

    det_q = 1.0
    for sel in outcome.tasks:
        det_q *= np.prod(weights[sel.inactive])

    T = linalg.block_diag(*[
        (t.X[:, sel.active].T @ t.X[:, sel.active] + sel.ridge * np.eye(sel.q)) * sel.signs[None, :]
        for t, sel in zip(dataset.tasks, outcome.tasks)]) if q else np.zeros((0, 0))
    R = np.zeros((q, q))
    for a, (k, j) in enumerate(labels):
        if lam / np.sqrt(gamma[j]) >= lam0:
            continue  # capped weight does not move with the magnitudes
        for c, (k2, j2) in enumerate(labels):
            if j2 == j:
                R[a, c] = -0.5 * lam * signs[a] * gamma[j] ** -1.5
    return det_q * float(np.linalg.det(R + T)) if q else det_q
