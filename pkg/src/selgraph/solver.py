"""Penalised precision-matrix estimation.

Solves

    minimise  tr((S - W) Theta) - log det Theta
              + sum_ij lam_ij * (gamma |Theta_ij| + (1 - gamma)/2 Theta_ij^2)

over symmetric positive-definite ``Theta``, where ``W`` is an optional
randomisation matrix and ``lam_ij = lam`` (the diagonal is exempt when
``penalize_diagonal`` is false). ``gamma = 1`` is the graphical lasso,
``gamma < 1`` the graphical elastic net.

The solver is a proximal Newton method: each outer iteration builds the
second-order model of the smooth part at the current iterate and minimises
model + penalty by cyclic coordinate descent over the free entries, with
the ridge term entering the coordinate denominator exactly. A backtracking
line search keeps iterates positive definite and the objective monotone.
Soft-thresholding in the coordinate step yields exact zeros.
"""

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import matcalc
from .errors import ConvergenceError, InsufficientDataError, PDRestorationError


@dataclass(frozen=True)
class PenaltySpec:
    lam: float
    gamma: float = 1.0
    penalize_diagonal: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")

    def weights(self, p):
        """Per-entry penalty levels as a ``p x p`` matrix."""
        lam = np.full((p, p), float(self.lam))
        if not self.penalize_diagonal:
            np.fill_diagonal(lam, 0.0)
        return lam


def universal_lambda(p, n):
    """``sqrt(2 log p / n)``, the default for randomised selection."""
    return math.sqrt(2.0 * math.log(p) / n)


def half_universal_lambda(p, n):
    """``sqrt(log p / n)``, the default for non-randomised selection."""
    return math.sqrt(math.log(p) / n)


@dataclass(frozen=True)
class RandomizationSpec:
    """Law of the randomisation ``omega ~ N_d(0, Omega)``.

    ``Omega`` is either ``sd^2 I`` (give ``sd``) or a full ``d x d`` matrix
    (give ``omega_cov``). ``zero_noise`` switches randomisation off, which
    is only meant for testing and for the non-randomised comparators.
    """

    p: int
    seed: int = 0
    sd: float = 1.0
    omega_cov: np.ndarray = None
    zero_noise: bool = False

    def __post_init__(self):
        if self.omega_cov is not None:
            cov = matcalc.check_symmetric(self.omega_cov)
            d = matcalc.vech_size(self.p)
            if cov.shape != (d, d):
                raise ValueError(f"omega_cov must be {d} x {d}")
            matcalc.cholesky_pd(cov, "randomisation covariance")
            object.__setattr__(self, "omega_cov", cov)
        elif not self.zero_noise and not self.sd > 0:
            raise ValueError("randomisation sd must be positive")

    @property
    def d(self):
        return matcalc.vech_size(self.p)

    @property
    def isotropic(self):
        return self.omega_cov is None

    def covariance(self):
        if self.omega_cov is not None:
            return self.omega_cov
        return self.sd ** 2 * np.eye(self.d)

    def solve(self, M):
        """``Omega^{-1} M``."""
        if self.omega_cov is None:
            return np.asarray(M, dtype=float) / self.sd ** 2
        return matcalc.solve_pd(self.omega_cov, M, "randomisation covariance")

    def logdet(self):
        if self.omega_cov is None:
            return 2.0 * self.d * math.log(self.sd)
        return matcalc.logdet_pd(self.omega_cov)

    def draw(self, rng=None):
        """One draw of ``omega`` (not yet scaled by ``1/sqrt(n)``)."""
        if self.zero_noise:
            return np.zeros(self.d)
        rng = matcalc.make_rng(self.seed if rng is None else rng)
        if self.omega_cov is None:
            return self.sd * rng.standard_normal(self.d)
        spec = matcalc.GaussianSpec(np.zeros(self.d), self.omega_cov)
        return matcalc.mvn_sample(spec, rng, 1)[0]


def randomization_matrix(omega_n):
    """Symmetric ``W_n`` built from ``omega_n``: vech inverse, diagonal doubled.

    With this construction ``D_p^T vec(W_n) / 2 = omega_n``, which is the
    scaling under which the KKT conditions of the randomised problem give
    ``sqrt(n) omega_n`` as the image of the randomisation map.
    """
    W = matcalc.unvech(omega_n)
    W[np.diag_indices_from(W)] *= 2.0
    return W


def make_randomization(spec, n, rng=None):
    """Draw ``omega``, return ``(W_n, omega_n)`` with ``omega_n = omega/sqrt(n)``."""
    omega_n = spec.draw(rng) / math.sqrt(n)
    return randomization_matrix(omega_n), omega_n


def sample_covariance(X):
    """``X^T X / n`` for pre-centred data."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array")
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {n}")
    S = X.T @ X / n
    return 0.5 * (S + S.T)


@dataclass
class GlassoSolution:
    theta_hat: np.ndarray
    W_n: np.ndarray
    omega_n: np.ndarray
    penalty: PenaltySpec
    converged: bool
    iterations: int
    kkt_residual: float
    objective_trace: list = field(default_factory=list, repr=False)

    @property
    def p(self):
        return self.theta_hat.shape[0]

    @property
    def theta_vech(self):
        return matcalc.vech(self.theta_hat)


def penalty_value(Theta, l1, ridge):
    return float(np.sum(l1 * np.abs(Theta)) + 0.5 * np.sum(ridge * Theta * Theta))


def objective(Theta, S_eff, l1, ridge):
    """Penalised objective, ``+inf`` outside the PD cone."""
    try:
        L = np.linalg.cholesky(Theta)
    except np.linalg.LinAlgError:
        return math.inf
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(np.sum(S_eff * Theta)) - logdet + penalty_value(Theta, l1, ridge)


def kkt_matrix(Theta, Sigma, S_eff, l1, ridge):
    """Entrywise stationarity residual of the penalised objective."""
    G = S_eff - Sigma + ridge * Theta
    nz = Theta != 0
    R = np.where(nz, G + l1 * np.sign(Theta), np.maximum(np.abs(G) - l1, 0.0))
    return R


@numba.njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@numba.njit(cache=True)
def _newton_cd(Sig, G, Theta, l1, ridge, fi, fj, max_sweeps, tol):
    """Coordinate descent on the proximal Newton model; returns Delta."""
    p = Sig.shape[0]
    D = np.zeros((p, p))
    U = np.zeros((p, p))  # U = D @ Sig
    nfree = fi.shape[0]
    for sweep in range(max_sweeps):
        max_step = 0.0
        max_theta = 0.0
        for k in range(nfree):
            i = fi[k]
            j = fj[k]
            if i == j:
                a = Sig[i, i] * Sig[i, i]
            else:
                a = Sig[i, j] * Sig[i, j] + Sig[i, i] * Sig[j, j]
            a += ridge[i, j]
            wdw = 0.0
            for r in range(p):
                wdw += Sig[i, r] * U[r, j]
            c = Theta[i, j] + D[i, j]
            b = G[i, j] + wdw + ridge[i, j] * c
            z = _soft(c - b / a, l1[i, j] / a)
            mu = z - c
            if mu != 0.0:
                D[i, j] += mu
                if i != j:
                    D[j, i] += mu
                    for r in range(p):
                        U[i, r] += mu * Sig[j, r]
                        U[j, r] += mu * Sig[i, r]
                else:
                    for r in range(p):
                        U[i, r] += mu * Sig[i, r]
                if abs(mu) > max_step:
                    max_step = abs(mu)
            if abs(z) > max_theta:
                max_theta = abs(z)
        if max_step <= tol * max(max_theta, 1.0):
            break
    return D


def _initial_theta(S_eff, l1, ridge):
    diag = np.diag(S_eff) + np.diag(l1)
    theta0 = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    return np.diag(theta0)


def solve_glasso(S_n, penalty, W_n=None, *, omega_n=None, tol=1e-6, max_iter=500,
                 theta_init=None):
    """Minimise the (randomised, possibly elastic-net) penalised objective.

    Parameters
    ----------
    S_n : ndarray, shape (p, p)
        Sample covariance.
    penalty : PenaltySpec
    W_n : ndarray, optional
        Randomisation matrix; ``None`` means no randomisation. ``S_n - W_n``
        does not need to be positive definite.
    omega_n : ndarray, optional
        The vech vector that produced ``W_n``; stored on the solution.
    tol : float
        Convergence requires both the largest relative change of ``Theta``
        and the entrywise KKT residual to fall below ``tol``.

    Returns
    -------
    GlassoSolution

    Raises
    ------
    ConvergenceError
        No convergence after ``max_iter`` Newton steps, or divergence.
    PDRestorationError
        The line search could not find a positive-definite step.
    """
    S_n = matcalc.check_symmetric(S_n)
    p = S_n.shape[0]
    if W_n is None:
        W_n = np.zeros((p, p))
        if omega_n is None:
            omega_n = np.zeros(matcalc.vech_size(p))
    S_eff = S_n - W_n
    lam = penalty.weights(p)
    l1 = penalty.gamma * lam
    ridge = (1.0 - penalty.gamma) * lam

    Theta = _initial_theta(S_eff, l1, ridge) if theta_init is None else np.array(theta_init, float)
    fval = objective(Theta, S_eff, l1, ridge)
    if not np.isfinite(fval):
        raise PDRestorationError("initial iterate is not positive definite")
    trace = [fval]
    rows, cols = matcalc.vech_indices(p)
    rel_change = math.inf
    resid = math.inf

    for it in range(1, max_iter + 1):
        Sigma = np.linalg.inv(Theta)
        Sigma = 0.5 * (Sigma + Sigma.T)
        R = kkt_matrix(Theta, Sigma, S_eff, l1, ridge)
        resid = float(np.max(np.abs(R)))
        if resid < tol and rel_change < tol:
            return GlassoSolution(Theta, W_n, omega_n, penalty, True, it - 1, resid, trace)

        G = S_eff - Sigma
        free = (Theta[rows, cols] != 0) | (np.abs(G[rows, cols]) > l1[rows, cols])
        fi = np.ascontiguousarray(rows[free])
        fj = np.ascontiguousarray(cols[free])
        sweeps = min(5 + 2 * it, 200)
        inner_tol = min(1e-2, 0.1 * resid) if np.isfinite(resid) else 1e-2
        D = _newton_cd(Sigma, G, Theta, l1, ridge, fi, fj, sweeps, max(inner_tol, 1e-12))

        # predicted decrease of model + penalty
        pen_now = penalty_value(Theta, l1, ridge)
        delta = float(np.sum(G * D)) + penalty_value(Theta + D, l1, ridge) - pen_now
        if delta > -1e-300 and np.max(np.abs(D)) == 0.0:
            rel_change = 0.0
            continue

        alpha = 1.0
        for _ in range(60):
            cand = Theta + alpha * D
            fnew = objective(cand, S_eff, l1, ridge)
            if np.isfinite(fnew) and fnew <= fval + 1e-3 * alpha * min(delta, 0.0) + 1e-12 * abs(fval):
                break
            alpha *= 0.5
        else:
            raise PDRestorationError("line search failed to keep the iterate positive definite")
        if fnew > fval:
            # accept only non-increasing steps; the slack above covers round-off
            fnew = fval if alpha * np.max(np.abs(D)) < 1e-14 else fnew
        step = alpha * D
        rel_change = float(np.max(np.abs(step)) / max(np.max(np.abs(Theta)), 1e-12))
        Theta = cand
        Theta = 0.5 * (Theta + Theta.T)
        fval = fnew
        trace.append(fval)
        if np.max(np.abs(Theta)) > 1e12:
            raise ConvergenceError("objective appears unbounded below", resid)

    Sigma = np.linalg.inv(Theta)
    resid = float(np.max(np.abs(kkt_matrix(Theta, Sigma, S_eff, l1, ridge))))
    if resid < tol and rel_change < tol:
        return GlassoSolution(Theta, W_n, omega_n, penalty, True, max_iter, resid, trace)
    raise ConvergenceError(f"no convergence after {max_iter} iterations (KKT residual {resid:.2e})", resid)


def solve_randomized(S_n, n, penalty, randomization, rng=None, **kwargs):
    """Draw the randomisation and solve; ``randomization`` is a RandomizationSpec."""
    W_n, omega_n = make_randomization(randomization, n, rng)
    return solve_glasso(S_n, penalty, W_n, omega_n=omega_n, **kwargs)
