"""Refitting on the selected edge set and the sandwich quantities around it.

Conventions (per observation, up to constants): the loss is
``(tr(S Theta) - log det Theta) / 2`` so that, in vech coordinates,

* gradient  ``D_p^T vec(S - Theta^{-1}) / 2``
* Hessian   ``H = D_p^T (Sigma kron Sigma) D_p / 2`` with ``Sigma = Theta^{-1}``
* score outer-product average
  ``J = sum_h D_p^T vec(X_h X_h^T - Sigma) vec(.)^T D_p / (4 n)``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import matcalc
from .errors import DecompositionError, NumericalRankError, RefitError


@dataclass(frozen=True)
class ActiveSet:
    """Selected vech positions ``E`` and their complement ``E'``."""

    E: np.ndarray
    E_complement: np.ndarray
    p: int

    def __post_init__(self):
        E = np.asarray(self.E, dtype=np.intp)
        Ec = np.asarray(self.E_complement, dtype=np.intp)
        d = matcalc.vech_size(self.p)
        both = np.concatenate([E, Ec])
        if both.size != d or np.unique(both).size != d:
            raise ValueError("E and its complement must partition the vech positions")
        if not np.all(np.isin(matcalc.diag_positions(self.p), E)):
            raise ValueError("every diagonal position must be active")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "E_complement", Ec)

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        p = matcalc.node_count(mask.size)
        return cls(np.flatnonzero(mask), np.flatnonzero(~mask), p)

    @classmethod
    def from_edges(cls, p, edges):
        """Diagonal plus the listed ``(i, j)`` node pairs."""
        lookup = matcalc.position_lookup(p)
        mask = np.zeros(matcalc.vech_size(p), dtype=bool)
        mask[matcalc.diag_positions(p)] = True
        for i, j in edges:
            mask[lookup[i, j]] = True
        return cls.from_mask(mask)

    @classmethod
    def full(cls, p):
        return cls.from_mask(np.ones(matcalc.vech_size(p), dtype=bool))

    @property
    def d(self):
        return matcalc.vech_size(self.p)

    @property
    def size_E(self):
        return self.E.size

    @property
    def size_Ec(self):
        return self.E_complement.size

    @property
    def mask(self):
        m = np.zeros(self.d, dtype=bool)
        m[self.E] = True
        return m

    def edges(self):
        """Off-diagonal active positions as ``(position, i, j)`` triples, ``i > j``."""
        rows, cols = matcalc.vech_indices(self.p)
        return [(int(k), int(rows[k]), int(cols[k])) for k in self.E if rows[k] != cols[k]]

    def edge_slots(self):
        """Indices into ``E`` of the off-diagonal positions."""
        rows, cols = matcalc.vech_indices(self.p)
        return np.flatnonzero(rows[self.E] != cols[self.E])


def extract_active_set(solution, zero_tol=0.0):
    """Active set of a penalised solution: positions with ``|theta| > zero_tol``."""
    theta = solution.theta_vech if hasattr(solution, "theta_vech") else matcalc.vech(solution)
    mask = np.abs(theta) > zero_tol
    p = matcalc.node_count(theta.size)
    mask[matcalc.diag_positions(p)] = True
    return ActiveSet.from_mask(mask)


def compute_H(theta_bar_mat, rows=None, cols=None):
    """Block of ``D_p^T (Sigma kron Sigma) D_p / 2`` at ``Sigma = Theta^{-1}``."""
    Sigma = matcalc.inv_pd(theta_bar_mat, "refitted precision matrix")
    return 0.5 * matcalc.dup_kron_dup(Sigma, rows, cols)


def score_matrix(theta_bar_mat, X):
    """Per-observation scores ``D_p^T vec(X_h X_h^T - Sigma) / 2`` as rows."""
    X = np.asarray(X, dtype=float)
    Sigma = matcalc.inv_pd(theta_bar_mat, "refitted precision matrix")
    p = Sigma.shape[0]
    rows, cols = matcalc.vech_indices(p)
    m = matcalc.multiplicity(p)
    return 0.5 * m * (X[:, rows] * X[:, cols] - Sigma[rows, cols])


def compute_J(theta_bar_mat, X, rows=None, cols=None):
    """Average outer product of the per-observation scores."""
    G = score_matrix(theta_bar_mat, X)
    n = G.shape[0]
    Gr = G if rows is None else G[:, rows]
    Gc = G if cols is None else G[:, cols]
    return Gr.T @ Gc / n


def _loss(Theta, S):
    try:
        L = np.linalg.cholesky(Theta)
    except np.linalg.LinAlgError:
        return np.inf
    return float(np.sum(S * Theta) - 2.0 * np.sum(np.log(np.diag(L))))


def constrained_mle(S_n, active, theta_init=None, tol=1e-9, max_iter=200):
    """Gaussian MLE with the entries outside ``active.E`` fixed at zero.

    Newton's method on the free coordinates with step halving until the
    iterate is PD and the loss decreases. Stops when the largest component
    of ``[D_p^T vec(S_n - Theta^{-1})]_E`` is below ``tol``.

    Raises
    ------
    RefitError
        If the iteration diverges or stalls (typically the MLE does not exist).
    """
    S_n = matcalc.check_symmetric(S_n)
    p = S_n.shape[0]
    E = active.E
    rows, cols = matcalc.vech_indices(p)

    theta = None
    if theta_init is not None:
        cand = matcalc.vech(theta_init) * active.mask
        if matcalc.is_pd(matcalc.unvech(cand)):
            theta = cand
    if theta is None:
        diag = np.diag(S_n)
        if np.any(diag <= 0):
            raise RefitError("sample covariance has a non-positive diagonal entry")
        theta = np.zeros(active.d)
        theta[matcalc.diag_positions(p)] = 1.0 / diag

    Theta = matcalc.unvech(theta)
    f = _loss(Theta, S_n)
    for _ in range(max_iter):
        Sigma = np.linalg.inv(Theta)
        Sigma = 0.5 * (Sigma + Sigma.T)
        grad = matcalc.dup_t_vec(S_n - Sigma)[E]
        gmax = np.max(np.abs(grad))
        if gmax <= tol:
            return Theta
        hess = matcalc.dup_kron_dup(Sigma, E, E)
        try:
            step = -matcalc.solve_pd(hess, grad, "refit Hessian")
        except DecompositionError as exc:
            raise RefitError("refit Hessian lost positive definiteness") from exc
        decrement = float(grad @ step)
        alpha = 1.0
        for _ in range(50):
            cand = theta.copy()
            cand[E] += alpha * step
            Cand = matcalc.unvech(cand)
            fc = _loss(Cand, S_n)
            if fc <= f + 1e-4 * alpha * decrement + 1e-13 * abs(f):
                break
            alpha *= 0.5
        else:
            raise RefitError("refit line search failed")
        theta, Theta, f = cand, Cand, fc
        if not np.isfinite(f) or np.max(np.abs(theta)) > 1e10:
            raise RefitError("refit diverged; the constrained MLE may not exist")
    raise RefitError(f"refit did not converge in {max_iter} iterations (gradient {gmax:.2e})")


@dataclass
class RefitState:
    """Refitted MLE on ``E`` with the sandwich and nuisance quantities.

    Only the ``E`` columns of ``H_n`` and ``J_n`` are stored; the full
    ``d x d`` matrices are available through :attr:`H_n` / :attr:`J_n`.
    When ``n < |E|`` the score matrix ``J`` is replaced by ``H`` throughout
    and ``h_fallback`` is set.
    """

    active: ActiveSet
    theta_bar: np.ndarray
    theta_bar_mat: np.ndarray
    H_cols: np.ndarray
    J_cols: np.ndarray
    Sigma_E: np.ndarray
    A_E: np.ndarray
    theta_perp: np.ndarray
    n: int
    h_fallback: bool
    X: np.ndarray = field(default=None, repr=False)

    @property
    def E(self):
        return self.active.E

    @property
    def H_EE(self):
        return self.H_cols[self.active.E]

    @property
    def J_EE(self):
        return self.J_cols[self.active.E]

    @property
    def H_n(self):
        return compute_H(self.theta_bar_mat)

    @property
    def J_n(self):
        if self.h_fallback or self.X is None:
            return self.H_n
        return compute_J(self.theta_bar_mat, self.X)

    @property
    def Sigma_E_perp(self):
        Ec = self.active.E_complement
        if self.h_fallback or self.X is None:
            J_cc = compute_H(self.theta_bar_mat, Ec, Ec)
        else:
            J_cc = compute_J(self.theta_bar_mat, self.X, Ec, Ec)
        J_cE = self.J_cols[Ec]
        out = J_cc - J_cE @ matcalc.solve_pd(self.J_EE, J_cE.T, "J_EE")
        return 0.5 * (out + out.T)

    @property
    def theta_perp_full(self):
        """``(0_E, theta_perp)`` laid out over all ``d`` vech positions."""
        out = np.zeros(self.active.d)
        out[self.active.E_complement] = self.theta_perp
        return out

    def gradient(self, S_n):
        """``D_p^T vec(S_n - Theta_bar^{-1}) / 2``."""
        Sigma = matcalc.inv_pd(self.theta_bar_mat)
        return 0.5 * matcalc.dup_t_vec(S_n - Sigma)


def compute_nuisance(H_cols, J_cols, active, theta_bar, grad):
    """Orthogonal nuisance statistic, ``A_E`` and the ``J_EE^{-1} H_EE`` product.

    Returns ``(theta_perp, A_E, K)`` with ``K = J_EE^{-1} H_EE``, where
    ``theta_perp = grad_{E'} - A_E theta_bar_E`` and
    ``A_E = H_{E'E} - J_{E'E} K``.
    """
    E, Ec = active.E, active.E_complement
    try:
        K = matcalc.solve_pd(J_cols[E], H_cols[E], "J_EE")
    except Exception as exc:
        raise NumericalRankError("J_EE is numerically singular") from exc
    A_E = H_cols[Ec] - J_cols[Ec] @ K
    theta_perp = grad[Ec] - A_E @ theta_bar
    return theta_perp, A_E, K


def refit(S_n, active, X=None, n=None, theta_init=None, force_h=False):
    """Refit on ``active`` and assemble a :class:`RefitState`.

    ``X`` supplies the per-observation scores for ``J``; without it (or when
    ``n < |E|``, or ``force_h``) ``J`` is replaced by ``H``, which is its
    Gaussian-model counterpart (second Bartlett identity).
    """
    Theta_bar = constrained_mle(S_n, active, theta_init)
    E = active.E
    if n is None:
        n = X.shape[0] if X is not None else 0
    h_fallback = force_h or X is None or n < active.size_E
    H_cols = compute_H(Theta_bar, None, E)
    J_cols = H_cols if h_fallback else compute_J(Theta_bar, X, None, E)
    theta_bar = matcalc.vech(Theta_bar)[E]

    H_EE = H_cols[E]
    H_inv = matcalc.inv_pd(H_EE, "H_EE")
    if h_fallback:
        Sigma_E = H_inv
    else:
        if not matcalc.is_pd(J_cols[E]):
            raise NumericalRankError("J_EE is not positive definite although n >= |E|")
        Sigma_E = H_inv @ J_cols[E] @ H_inv
        Sigma_E = 0.5 * (Sigma_E + Sigma_E.T)
    Sigma = matcalc.inv_pd(Theta_bar)
    grad = 0.5 * matcalc.dup_t_vec(S_n - Sigma)
    theta_perp, A_E, _ = compute_nuisance(H_cols, J_cols, active, theta_bar, grad)
    return RefitState(active, theta_bar, Theta_bar, H_cols, J_cols, Sigma_E, A_E,
                      theta_perp, int(n), bool(h_fallback), X)
