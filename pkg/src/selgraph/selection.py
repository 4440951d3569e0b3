"""The selection event of a randomised penalised fit.

Signs and magnitudes of the active entries are read off the solution; the
inactive subgradients are recovered by inverting the KKT conditions, so a
solution produced elsewhere can be ingested as long as ``omega_n`` is known.
In vech coordinates (loss scaled by 1/2) stationarity reads

    l'(theta_hat) - omega_n + gamma/2 * D^T vec(P') + lam (1-gamma)/2 * D^T D theta_hat = 0

with ``l' = D^T vec(S_n - Theta_hat^{-1}) / 2`` and ``vech(P')_j = lam * u_j``.
"""

from dataclasses import dataclass

import numpy as np

from . import matcalc
from .errors import KKTViolationError
from .refit import ActiveSet, extract_active_set

BOX_TOL = 1e-4


@dataclass(frozen=True)
class SelectionEvent:
    active: ActiveSet
    S: np.ndarray
    B: np.ndarray
    U: np.ndarray
    subgrad_full: np.ndarray
    theta_hat: np.ndarray

    @property
    def signed_magnitudes(self):
        return self.S * self.B


def _penalty_levels(p, penalty):
    lam = np.full(matcalc.vech_size(p), float(penalty.lam))
    if not penalty.penalize_diagonal:
        lam[matcalc.diag_positions(p)] = 0.0
    return lam


def loss_gradient(theta_hat_mat, S_n):
    """``l' = D_p^T vec(S_n - Theta^{-1}) / 2``."""
    Sigma = matcalc.inv_pd(theta_hat_mat, "penalised solution")
    return 0.5 * matcalc.dup_t_vec(S_n - Sigma)


def recover_subgradient(theta_hat_mat, omega_n, S_n, penalty):
    """Penalty subgradient ``u`` at every vech position from the KKT identity."""
    p = theta_hat_mat.shape[0]
    theta = matcalc.vech(theta_hat_mat)
    m = matcalc.multiplicity(p)
    lam = _penalty_levels(p, penalty)
    grad = loss_gradient(theta_hat_mat, S_n)
    scale = lam * penalty.gamma
    numer = 2.0 * (omega_n - grad) / m - lam * (1.0 - penalty.gamma) * theta
    u = np.divide(numer, scale, out=np.zeros_like(numer), where=scale > 0)
    return u


def extract_event(solution, S_n, penalty=None, zero_tol=0.0, box_tol=BOX_TOL):
    """Selection event ``(E, S, B, U)`` of a converged randomised solution.

    Raises
    ------
    KKTViolationError
        If a recovered inactive subgradient leaves ``[-1, 1]`` by more than
        ``box_tol`` (the solver tolerance was too loose).
    """
    penalty = solution.penalty if penalty is None else penalty
    active = extract_active_set(solution, zero_tol)
    theta = solution.theta_vech
    theta_E = theta[active.E]
    S = np.sign(theta_E)
    B = np.abs(theta_E)
    diag_slots = np.isin(active.E, matcalc.diag_positions(active.p))
    if np.any(S[diag_slots] <= 0):
        raise KKTViolationError("a diagonal entry of the penalised solution is not positive")
    u = recover_subgradient(solution.theta_hat, solution.omega_n, S_n, penalty)
    U = u[active.E_complement]
    if U.size and np.max(np.abs(U)) > 1.0 + box_tol:
        raise KKTViolationError(
            f"inactive subgradient outside [-1, 1] (max |u| = {np.max(np.abs(U)):.6f})"
        )
    return SelectionEvent(active, S, B, U, u, theta)


def kkt_residual(event, solution, S_n, penalty=None):
    """Sup-norm of the stationarity residual, in vech coordinates.

    Active coordinates use the realised signs; inactive ones contribute the
    amount by which their subgradient leaves the unit box.
    """
    penalty = solution.penalty if penalty is None else penalty
    p = solution.p
    m = matcalc.multiplicity(p)
    lam = _penalty_levels(p, penalty)
    theta = solution.theta_vech
    grad = loss_gradient(solution.theta_hat, S_n)
    E, Ec = event.active.E, event.active.E_complement
    r = np.zeros(theta.size)
    r[E] = (grad[E] - solution.omega_n[E]
            + 0.5 * penalty.gamma * m[E] * lam[E] * np.sign(theta[E])
            + 0.5 * (1.0 - penalty.gamma) * m[E] * lam[E] * theta[E])
    scale = 0.5 * penalty.gamma * m[Ec] * lam[Ec]
    u = recover_subgradient(solution.theta_hat, solution.omega_n, S_n, penalty)[Ec]
    r[Ec] = np.maximum(np.abs(u) - 1.0, 0.0) * scale
    return float(np.max(np.abs(r))) if r.size else 0.0
