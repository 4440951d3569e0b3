"""Selective likelihood, selective MLE and observed Fisher information.

All vectors living on the selection side (``b``, ``q``, ``m``, ``f``) are on
the ``sqrt(n)`` scale: ``b = sqrt(n) B``. The randomisation map is

    sqrt(n) omega_bar = C1 sqrt(n) theta_bar + C2 sqrt(n) B + f(U; sqrt(n) theta_perp)

and the conditional law of ``(sqrt(n) theta_bar, b)`` factorises as
``rho(sqrt(n) theta_bar; L sqrt(n) theta + m, Z) rho(b; P sqrt(n) theta_bar + q, Delta)``
truncated to ``b > c``. The truncation probability is replaced by a
log-barrier regularised quadratic optimisation.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import matcalc
from .errors import BarrierError, ConditioningError, DecompositionError

BARRIER_C = 0.0


@dataclass
class SelectiveParams:
    C1: np.ndarray
    C2: np.ndarray
    f_u: np.ndarray
    K_n: np.ndarray
    n: int
    Sigma_E: np.ndarray = None
    Delta: np.ndarray = None
    Delta_inv: np.ndarray = None
    P: np.ndarray = None
    q: np.ndarray = None
    Z: np.ndarray = None
    Z_inv: np.ndarray = None
    L: np.ndarray = None
    m: np.ndarray = None
    c: float = BARRIER_C

    @property
    def size_E(self):
        return self.C1.shape[1]

    def map_value(self, theta, b):
        """``C1 theta + C2 b + f``; arguments on the ``sqrt(n)`` scale."""
        return self.C1 @ theta + self.C2 @ b + self.f_u

    @property
    def L_condition(self):
        return float(np.linalg.cond(self.L)) if self.L is not None else math.nan


@dataclass
class SelectiveEstimate:
    theta_tilde: np.ndarray
    fisher_inv: np.ndarray
    b_hat: np.ndarray
    barrier_converged: bool
    loglik_at_mle: float
    theta_bar: np.ndarray
    n: int
    active: object = None

    @property
    def size_E(self):
        return self.theta_tilde.size

    def standard_errors(self):
        return np.sqrt(np.maximum(np.diag(self.fisher_inv), 0.0) / self.n)


def _signed_penalty(p, penalty, event):
    lam = np.full(matcalc.vech_size(p), float(penalty.lam))
    if not penalty.penalize_diagonal:
        lam[matcalc.diag_positions(p)] = 0.0
    vh = np.zeros_like(lam)
    vh[event.active.E] = lam[event.active.E] * event.S
    vh[event.active.E_complement] = lam[event.active.E_complement] * event.U
    return lam, vh


def _lasso_map(refit, event, penalty, n):
    p = refit.active.p
    rootn = math.sqrt(n)
    K_JH = matcalc.solve_pd(refit.J_EE, refit.H_EE, "J_EE")
    C1 = -refit.J_cols @ K_JH
    C2 = refit.H_cols * event.S
    _, vh = _signed_penalty(p, penalty, event)
    f_u = 0.5 * rootn * matcalc.multiplicity(p) * vh + rootn * refit.theta_perp_full
    K_n = np.zeros_like(C2)
    return SelectiveParams(C1, C2, f_u, K_n, n, refit.Sigma_E)


def _elastic_net_map(refit, event, penalty, n):
    p = refit.active.p
    rootn = math.sqrt(n)
    gamma = penalty.gamma
    K_JH = matcalc.solve_pd(refit.J_EE, refit.H_EE, "J_EE")
    C1 = -refit.J_cols @ K_JH
    lam, vh = _signed_penalty(p, penalty, event)
    # K_n = lam (1 - gamma) D^T D / 2 is diagonal; keep its E columns
    k_diag = lam * (1.0 - gamma) * matcalc.multiplicity(p) / 2.0
    K_n = np.zeros_like(refit.H_cols)
    E = refit.active.E
    K_n[E, np.arange(E.size)] = k_diag[E]
    C2 = (refit.H_cols + K_n) * event.S
    f_u = gamma * (0.5 * rootn * matcalc.multiplicity(p) * vh) + rootn * refit.theta_perp_full
    return SelectiveParams(C1, C2, f_u, K_n, n, refit.Sigma_E)


def randomization_map(refit, event, penalty, n=None, elastic_net=None):
    """Map matrices ``C1``, ``C2`` and offset ``f_u``.

    The graphical-lasso form is used for ``gamma == 1`` unless
    ``elastic_net=True`` forces the elastic-net form (which reduces to the
    same numbers).
    """
    n = refit.n if n is None else n
    if elastic_net is None:
        elastic_net = penalty.gamma < 1.0
    if elastic_net:
        return _elastic_net_map(refit, event, penalty, n)
    return _lasso_map(refit, event, penalty, n)


def reconstruction_error(params, refit, event, omega_n):
    """Relative error ``|Pi(sqrt(n) B, U) - sqrt(n) omega_n| / |sqrt(n) omega_n|``."""
    rootn = math.sqrt(params.n)
    target = rootn * np.asarray(omega_n)
    image = params.map_value(rootn * refit.theta_bar, rootn * event.B)
    return float(np.linalg.norm(image - target) / np.linalg.norm(target))


def _sym(A):
    return 0.5 * (A + A.T)


def likelihood_params(params, randomization, Sigma_E=None):
    """Fill in ``Delta, P, q, Z, L, m`` from the map and ``Omega``.

    ``randomization`` is anything with a ``solve(M) -> Omega^{-1} M`` method
    (a RandomizationSpec) or an explicit ``Omega`` matrix.
    """
    if isinstance(randomization, np.ndarray):
        Omega = randomization
        solve = lambda M: matcalc.solve_pd(Omega, M, "Omega")  # noqa: E731
    else:
        solve = randomization.solve
    Sigma_E = params.Sigma_E if Sigma_E is None else Sigma_E
    C1, C2, f = params.C1, params.C2, params.f_u
    Oi_C2 = solve(C2)
    Oi_C1 = solve(C1)
    Oi_f = solve(f)
    Delta_inv = _sym(C2.T @ Oi_C2)
    try:
        Delta = matcalc.inv_pd(Delta_inv, "C2^T Omega^{-1} C2")
    except DecompositionError as exc:
        raise ConditioningError("C2^T Omega^{-1} C2 is not positive definite") from exc
    P = -Delta @ (C2.T @ Oi_C1)
    q = -Delta @ (C2.T @ Oi_f)
    try:
        Sigma_inv = matcalc.inv_pd(Sigma_E, "Sigma_E")
    except DecompositionError as exc:
        raise ConditioningError("Sigma_E is not positive definite") from exc
    Z_inv = _sym(Sigma_inv - P.T @ Delta_inv @ P + C1.T @ Oi_C1)
    try:
        Z = matcalc.inv_pd(Z_inv, "Z^{-1}")
    except DecompositionError as exc:
        eig = matcalc.min_eigenvalue(Z_inv)
        raise ConditioningError(f"Z is indefinite (smallest eigenvalue of Z^-1 = {eig:.3g})") from exc
    L = Z @ Sigma_inv
    m = Z @ (P.T @ Delta_inv @ q - C1.T @ Oi_f)
    params.Sigma_E = Sigma_E
    params.Delta, params.Delta_inv = Delta, Delta_inv
    params.P, params.q = P, q
    params.Z, params.Z_inv = Z, Z_inv
    params.L, params.m = L, m
    return params


def barrier_solve(precision, target, c=BARRIER_C, tol=1e-8, max_iter=200):
    """Minimise ``(b - t)^T Q (b - t) / 2 - sum log(b - c)`` by damped Newton.

    Returns ``(b_star, value, converged)``.
    """
    Q = np.atleast_2d(np.asarray(precision, dtype=float))
    t = np.atleast_1d(np.asarray(target, dtype=float))
    b = np.maximum(t - c, 1.0) + c

    def value(x):
        r = x - t
        return 0.5 * r @ Q @ r - np.sum(np.log(x - c))

    f = value(b)
    for _ in range(max_iter):
        s = b - c
        grad = Q @ (b - t) - 1.0 / s
        if np.max(np.abs(grad)) <= tol:
            return b, float(f), True
        hess = Q + np.diag(1.0 / s ** 2)
        step = -matcalc.solve_pd(hess, grad, "barrier Hessian")
        # stay strictly inside b > c
        neg = step < 0
        alpha = 1.0
        if np.any(neg):
            alpha = min(1.0, 0.99 * np.min(-s[neg] / step[neg]))
        decrement = float(grad @ step)
        gnorm = np.max(np.abs(grad))
        for _ in range(60):
            cand = b + alpha * step
            fc = value(cand)
            if fc <= f + 1e-4 * alpha * decrement:
                break
            # near the optimum objective differences drown in round-off;
            # a step that shrinks the gradient is accepted instead
            if np.max(np.abs(Q @ (cand - t) - 1.0 / (cand - c))) < 0.5 * gnorm:
                break
            alpha *= 0.5
        else:
            break
        b, f = cand, fc
    s = b - c
    grad = Q @ (b - t) - 1.0 / s
    return b, float(f), bool(np.max(np.abs(grad)) <= max(tol, 1e-6))


def barrier_optimize(params, theta_query):
    """Inner ``b``-problem at ``theta = theta_query`` (original scale).

    Returns ``(b_star, value)`` where ``value`` is the minimised objective;
    ``-value`` approximates the log probability of the truncation event.
    """
    rootn = math.sqrt(params.n)
    target = params.P @ (rootn * np.asarray(theta_query)) + params.q
    b, val, ok = barrier_solve(params.Delta_inv, target, params.c)
    if not ok:
        raise BarrierError("barrier optimisation did not converge")
    return b, val


def laplace_log_normalizer(params, theta_star):
    """Barrier approximation of ``log P[b > c]`` under parameter ``theta_star``.

    Minimising the joint objective over ``theta`` first leaves a ``b``-only
    problem with covariance ``Delta + P Z P^T`` around ``P a + q``,
    ``a = L sqrt(n) theta_star + m``.
    """
    rootn = math.sqrt(params.n)
    a = params.L @ (rootn * np.asarray(theta_star)) + params.m
    cov = _sym(params.Delta + params.P @ params.Z @ params.P.T)
    prec = matcalc.inv_pd(cov, "Delta + P Z P^T")
    b, val, ok = barrier_solve(prec, params.P @ a + params.q, params.c)
    if not ok:
        raise BarrierError("normaliser optimisation did not converge")
    return -val


def joint_laplace_value(params, theta_star, u, b):
    """The two-block objective of the normaliser at a given ``(u, b)``.

    ``u`` plays the role of ``sqrt(n) theta``; used to check the reduction
    performed in :func:`laplace_log_normalizer`.
    """
    rootn = math.sqrt(params.n)
    a = params.L @ (rootn * np.asarray(theta_star)) + params.m
    r1 = u - a
    r2 = b - params.P @ u - params.q
    if np.any(b <= params.c):
        return math.inf
    return float(0.5 * r1 @ params.Z_inv @ r1 + 0.5 * r2 @ params.Delta_inv @ r2
                 - np.sum(np.log(b - params.c)))


def selective_loglik(params, theta_bar, theta_star):
    """Computed selective log-likelihood of ``theta_star`` given ``theta_bar``."""
    rootn = math.sqrt(params.n)
    mean = params.L @ (rootn * np.asarray(theta_star)) + params.m
    spec = matcalc.GaussianSpec(mean, params.Z)
    return matcalc.mvn_logdensity(rootn * np.asarray(theta_bar), spec) - laplace_log_normalizer(
        params, theta_star
    )


def selective_mle(params, theta_bar, active=None, with_loglik=True):
    """Closed-form selective MLE and inverse observed Fisher information."""
    n = params.n
    rootn = math.sqrt(n)
    x = rootn * np.asarray(theta_bar)
    target = params.P @ x + params.q
    b_hat, _, ok = barrier_solve(params.Delta_inv, target, params.c)
    if not ok:
        raise BarrierError("barrier optimisation did not converge")
    L = params.L
    try:
        Linv_Z = np.linalg.solve(L, params.Z)
        Linv_xm = np.linalg.solve(L, x - params.m)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("L is singular") from exc
    if not np.all(np.isfinite(Linv_Z)):
        raise ConditioningError("L is singular")
    PtDi = params.P.T @ params.Delta_inv
    root_theta = Linv_xm + Linv_Z @ (PtDi @ (target - b_hat))
    theta_tilde = root_theta / rootn

    barrier_hess = np.diag(1.0 / (b_hat - params.c) ** 2)
    inner = matcalc.inv_pd(params.Delta_inv + barrier_hess, "Delta^{-1} + barrier Hessian")
    middle = PtDi @ params.P - PtDi @ inner @ PtDi.T
    Linv = np.linalg.inv(L)
    fisher_inv = Linv @ params.Z @ Linv.T + Linv_Z @ middle @ Linv_Z.T
    fisher_inv = _sym(fisher_inv)
    if not matcalc.is_pd(fisher_inv):
        raise ConditioningError("inverse Fisher information is not positive definite")
    ll = selective_loglik(params, theta_bar, theta_tilde) if with_loglik else math.nan
    return SelectiveEstimate(theta_tilde, fisher_inv, b_hat, ok, ll, np.asarray(theta_bar), n,
                              active)
