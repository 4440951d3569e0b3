"""Matrix-calculus primitives for symmetric matrices.

Half-vectorisation uses the lower triangle in column-major order, i.e. for
``p = 3`` the positions are ``(0,0), (1,0), (2,0), (1,1), (2,1), (2,2)``.
Every index set in the package (active sets, complements, node incidences)
refers to this ordering.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import DecompositionError, SymmetryError

SYMMETRY_TOL = 1e-10
LOG_2PI = np.log(2 * np.pi)


def vech_size(p):
    return p * (p + 1) // 2


def node_count(d):
    """Invert ``d = p(p+1)/2``."""
    p = int(round((np.sqrt(8 * d + 1) - 1) / 2))
    if vech_size(p) != d:
        raise ValueError(f"{d} is not a triangular number")
    return p


@lru_cache(maxsize=64)
def _vech_indices(p):
    cols, rows = np.triu_indices(p)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def vech_indices(p):
    """Row and column index arrays of the vech positions (row >= col)."""
    return _vech_indices(p)


@lru_cache(maxsize=64)
def _diag_positions(p):
    rows, cols = _vech_indices(p)
    out = np.flatnonzero(rows == cols)
    out.setflags(write=False)
    return out


def diag_positions(p):
    """Vech positions of the diagonal entries."""
    return _diag_positions(p)


@lru_cache(maxsize=64)
def _multiplicity(p):
    rows, cols = _vech_indices(p)
    m = np.where(rows == cols, 1.0, 2.0)
    m.setflags(write=False)
    return m


def multiplicity(p):
    """Number of matrix entries represented by each vech position (1 or 2)."""
    return _multiplicity(p)


@lru_cache(maxsize=64)
def _position_lookup(p):
    rows, cols = _vech_indices(p)
    lookup = np.empty((p, p), dtype=np.intp)
    k = np.arange(rows.size)
    lookup[rows, cols] = k
    lookup[cols, rows] = k
    lookup.setflags(write=False)
    return lookup


def position_lookup(p):
    """``p x p`` array giving the vech position of entry ``(i, j)``."""
    return _position_lookup(p)


def check_symmetric(A, tol=SYMMETRY_TOL):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SymmetryError(f"expected a square matrix, got shape {A.shape}")
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > tol:
        raise SymmetryError(f"matrix is not symmetric (max |A - A^T| = {asym:.3g})")
    return 0.5 * (A + A.T)


def vech(A):
    """Half-vectorise a symmetric matrix.

    The input is symmetrised as ``(A + A^T)/2`` after the symmetry check so
    that solver round-off does not leak into the result.

    Examples
    --------
    >>> vech(np.array([[2.0, 3.0], [3.0, 5.0]]))
    array([2., 3., 5.])
    """
    A = check_symmetric(A)
    rows, cols = vech_indices(A.shape[0])
    return A[rows, cols]


def unvech(v):
    v = np.asarray(v, dtype=float)
    p = node_count(v.size)
    rows, cols = vech_indices(p)
    A = np.zeros((p, p))
    A[rows, cols] = v
    A[cols, rows] = v
    return A


def duplication_matrix(p):
    """Sparse ``p^2 x d`` duplication matrix with ``vec(A) = D vech(A)``.

    ``vec`` stacks columns, so entry ``(i, j)`` sits at row ``i + p*j``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    rows, cols = vech_indices(p)
    d = rows.size
    k = np.arange(d)
    r = np.concatenate([rows + p * cols, cols + p * rows])
    c = np.concatenate([k, k])
    # the diagonal appears twice in (r, c); keep one copy
    keep = np.concatenate([np.ones(d, bool), rows != cols])
    data = np.ones(keep.sum())
    return scipy.sparse.csr_array((data, (r[keep], c[keep])), shape=(p * p, d))


def dup_t_vec(A):
    """``D_p^T vec(A)`` without forming ``D_p``.

    For a symmetric ``A`` this is ``vech(A)`` with off-diagonal entries
    doubled; for a general square ``A`` the two triangles are summed.
    """
    A = np.asarray(A, dtype=float)
    rows, cols = vech_indices(A.shape[0])
    out = A[rows, cols] + A[cols, rows]
    out[rows == cols] *= 0.5
    return out


def dup_kron_dup(Sigma, rows=None, cols=None):
    """Block of ``D_p^T (Sigma kron Sigma) D_p`` for a symmetric ``Sigma``.

    Entry ``((i,j), (k,l))`` equals
    ``m_ij m_kl (Sigma_ik Sigma_jl + Sigma_il Sigma_jk) / 2`` with ``m = 1`` on
    the diagonal and 2 off it. ``rows`` / ``cols`` select vech positions.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    p = Sigma.shape[0]
    vi, vj = vech_indices(p)
    m = multiplicity(p)
    r = np.arange(vi.size) if rows is None else np.asarray(rows, dtype=np.intp)
    c = np.arange(vi.size) if cols is None else np.asarray(cols, dtype=np.intp)
    i, j = vi[r][:, None], vj[r][:, None]
    k, l = vi[c][None, :], vj[c][None, :]
    block = Sigma[i, k] * Sigma[j, l] + Sigma[i, l] * Sigma[j, k]
    return block * (0.5 * m[r][:, None] * m[c][None, :])


def cholesky_pd(A, what="matrix"):
    """Lower Cholesky factor, raising :class:`DecompositionError` if not PD."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"{what} is not positive definite") from exc


def is_pd(A):
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


def min_eigenvalue(A):
    """Diagnostic only; PD checks go through :func:`cholesky_pd`."""
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def inv_pd(A, what="matrix"):
    """Inverse of a symmetric PD matrix via its Cholesky factor, symmetrised."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return A.copy()
    try:
        c, low = scipy.linalg.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"{what} is not positive definite") from exc
    out = scipy.linalg.cho_solve((c, low), np.eye(A.shape[0]))
    return 0.5 * (out + out.T)


def solve_pd(A, B, what="matrix"):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros_like(np.asarray(B, dtype=float))
    try:
        c, low = scipy.linalg.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"{what} is not positive definite") from exc
    return scipy.linalg.cho_solve((c, low), B)


def logdet_pd(A):
    L = cholesky_pd(A)
    return 2.0 * np.sum(np.log(np.diag(L)))


@dataclass
class GaussianSpec:
    """Mean and covariance of a multivariate normal law."""

    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(
                f"covariance shape {cov.shape} does not match mean of length {self.mean.size}"
            )
        self.covariance = check_symmetric(cov)
        self._chol = cholesky_pd(self.covariance, "covariance")

    @property
    def dim(self):
        return self.mean.size

    @property
    def cholesky(self):
        return self._chol


def mvn_logdensity(x, spec):
    """Log density of ``N(spec.mean, spec.covariance)`` at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != spec.dim:
        raise ValueError(f"x has dimension {x.shape[-1]}, expected {spec.dim}")
    L = spec.cholesky
    z = scipy.linalg.solve_triangular(L, (x - spec.mean).T, lower=True)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * (spec.dim * LOG_2PI + logdet + maha)
    return float(out) if np.ndim(out) == 0 else out


def mvn_sample(spec, rng, n):
    """``n`` i.i.d. draws as an ``(n, dim)`` array."""
    if n == 0:
        return np.empty((0, spec.dim))
    z = rng.standard_normal((n, spec.dim))
    return spec.mean + z @ spec.cholesky.T


def make_rng(seed):
    """PCG64 generator; accepts an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(master_seed, k):
    """``k`` independent child seed sequences of ``master_seed``."""
    return np.random.SeedSequence(master_seed).spawn(k)
