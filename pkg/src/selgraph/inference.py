"""Intervals and tests for edge-level and node-level targets after selection.

Every function takes an estimate object exposing ``theta_tilde``,
``fisher_inv``, ``n`` and ``active`` (a :class:`SelectiveEstimate`, or the
unconditional estimate built by :func:`unconditional_estimate`). Node-level
functionals only involve off-diagonal selected positions; self-loops never
count towards a node's edge set.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.stats

from . import matcalc
from .errors import InfeasibleNullError, NotSelectedError, NoTargetError
from .refit import constrained_mle
from .selective import SelectiveEstimate

TARGET_KINDS = (
    "edge",
    "node_strength",
    "expected_influence_1",
    "expected_influence_2",
    "bridge_strength",
    "bridge_influence",
    "strength_difference",
)
BOOTSTRAP_KINDS = ("node_strength", "bridge_strength", "strength_difference")
DEFAULT_DRAWS = 10_000
NULL_TOL = 1e-9


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    nodes: tuple = ()
    communities: np.ndarray = field(default=None, repr=False)
    alpha: float = 0.05

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        need = 2 if self.kind in ("edge", "strength_difference") else 1
        if len(self.nodes) != need:
            raise ValueError(f"target {self.kind} needs {need} node index(es)")
        if self.kind.startswith("bridge") and self.communities is None:
            raise ValueError("bridge targets need community labels")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def bridge(self):
        return self.kind.startswith("bridge")


@dataclass(frozen=True)
class InferenceResult:
    estimate: float
    ci_lower: float
    ci_upper: float
    p_value: float
    method: str
    bootstrap_draws: int = 0
    null_value: float = 0.0

    @property
    def length(self):
        return self.ci_upper - self.ci_lower

    def covers(self, value, alpha=0.05):
        if self.method == "bootstrap":
            return self.p_value > alpha
        return self.ci_lower <= value <= self.ci_upper


def unconditional_estimate(refit_state):
    """Refitted MLE with its sandwich covariance, as if ``E`` were fixed."""
    return SelectiveEstimate(
        theta_tilde=refit_state.theta_bar.copy(),
        fisher_inv=refit_state.Sigma_E,
        b_hat=np.empty(0),
        barrier_converged=True,
        loglik_at_mle=math.nan,
        theta_bar=refit_state.theta_bar,
        n=refit_state.n,
        active=refit_state.active,
    )


# --- index sets ------------------------------------------------------------

def incident_slots(active, j, communities=None):
    """Indices into ``E`` of selected edges at node ``j``.

    With ``communities`` only edges leading to another community are kept.
    """
    if not 0 <= j < active.p:
        raise IndexError(f"node {j} outside 0..{active.p - 1}")
    rows, cols = matcalc.vech_indices(active.p)
    r, c = rows[active.E], cols[active.E]
    hit = (r != c) & ((r == j) | (c == j))
    if communities is not None:
        other = np.where(r == j, c, r)
        hit &= np.asarray(communities)[other] != communities[j]
    return np.flatnonzero(hit)


def edge_slot(active, i, j):
    if i == j:
        raise NotSelectedError("a diagonal position is not an edge")
    pos = matcalc.position_lookup(active.p)[i, j]
    where = np.flatnonzero(active.E == pos)
    if where.size == 0:
        raise NotSelectedError(f"edge ({i}, {j}) was not selected")
    return int(where[0])


def _abs_coefficients(active, target):
    """Slots and signs ``c`` with ``t(theta) = sum c_i |theta_slot_i|``."""
    comm = target.communities if target.bridge else None
    if target.kind == "strength_difference":
        j, k = target.nodes
        coef = {}
        for s in incident_slots(active, j):
            coef[int(s)] = coef.get(int(s), 0) + 1
        for s in incident_slots(active, k):
            coef[int(s)] = coef.get(int(s), 0) - 1
        slots = np.array(sorted(s for s, v in coef.items() if v != 0), dtype=np.intp)
        c = np.array([coef[s] for s in slots], dtype=float)
        return slots, c
    slots = incident_slots(active, target.nodes[0], comm)
    return slots, np.ones(slots.size)


def influence_weights(active, j, communities=None):
    w = np.zeros(active.size_E)
    w[incident_slots(active, j, communities)] = 1.0
    return w


def two_step_matrices(active, j):
    """``A1``, ``A2``, ``B2`` with ``EI2(j) = A1 theta + theta^T A2^T B2 theta``.

    Row ``r`` of ``A2`` picks the ``r``-th edge ``(i, j)`` at ``j``; the same
    row of ``B2`` is the indicator of the edges at the neighbour ``i``.
    """
    rows, cols = matcalc.vech_indices(active.p)
    slots = incident_slots(active, j)
    A1 = np.zeros(active.size_E)
    A1[slots] = 1.0
    A2 = np.zeros((slots.size, active.size_E))
    B2 = np.zeros((slots.size, active.size_E))
    for r, s in enumerate(slots):
        pos = active.E[s]
        i = rows[pos] if cols[pos] == j else cols[pos]
        A2[r, s] = 1.0
        B2[r, incident_slots(active, int(i))] = 1.0
    return A1, A2, B2


def two_step_influence(theta, active, j):
    """``EI2(j) = EI1(j) + sum_i Theta_ij EI1(i)`` evaluated directly."""
    rows, cols = matcalc.vech_indices(active.p)
    theta = np.asarray(theta)
    total = 0.0
    for s in incident_slots(active, j):
        pos = active.E[s]
        i = rows[pos] if cols[pos] == j else cols[pos]
        total += theta[s] + theta[s] * theta[incident_slots(active, int(i))].sum()
    return float(total)


def target_value(target, theta, active):
    """Value of ``target`` at the ``|E|``-vector ``theta``."""
    theta = np.asarray(theta, dtype=float)
    kind = target.kind
    if kind == "edge":
        return float(theta[edge_slot(active, *target.nodes)])
    if kind in ("expected_influence_1", "bridge_influence"):
        comm = target.communities if target.bridge else None
        return float(influence_weights(active, target.nodes[0], comm) @ theta)
    if kind == "expected_influence_2":
        return two_step_influence(theta, active, target.nodes[0])
    slots, c = _abs_coefficients(active, target)
    return float(c @ np.abs(theta[slots]))


def pseudo_true_target(theta_true, active):
    """Population minimiser of the loss over precision matrices supported on ``E``."""
    sigma_true = matcalc.inv_pd(matcalc.check_symmetric(theta_true), "true precision")
    Theta = constrained_mle(sigma_true, active, theta_init=theta_true, tol=1e-11)
    return matcalc.vech(Theta)[active.E]


# --- normal-theory targets --------------------------------------------------

def _normal_result(estimate, variance, n, alpha, method):
    variance = max(float(variance), 0.0)
    se = math.sqrt(variance / n)
    z = scipy.stats.norm.ppf(1.0 - alpha / 2.0) if alpha < 1.0 else 0.0
    if se > 0:
        pval = float(2.0 * scipy.stats.norm.sf(abs(estimate) / se))
    else:
        pval = 0.0 if estimate != 0 else 1.0
    estimate = float(estimate)
    return InferenceResult(estimate, estimate - z * se, estimate + z * se, pval, method)


def edge_interval(est, j, alpha=0.05):
    """Normal interval for the ``j``-th selected coordinate (index into ``E``)."""
    if not 0 <= j < est.theta_tilde.size:
        raise NotSelectedError(f"slot {j} is not in the selected set")
    return _normal_result(est.theta_tilde[j], est.fisher_inv[j, j], est.n, alpha, "normal")


def linear_functional_interval(est, weights, alpha=0.05):
    w = np.asarray(weights, dtype=float)
    if w.shape != est.theta_tilde.shape:
        raise ValueError(f"weights must have length {est.theta_tilde.size}")
    return _normal_result(w @ est.theta_tilde, w @ est.fisher_inv @ w, est.n, alpha, "normal")


def two_step_influence_interval(est, j, alpha=0.05):
    """Delta-method interval for the two-step expected influence of node ``j``."""
    active = est.active
    A1, A2, B2 = two_step_matrices(active, j)
    if not A1.any():
        raise NoTargetError(f"node {j} has no selected edge")
    theta = est.theta_tilde
    M = A2.T @ B2
    value = A1 @ theta + theta @ M @ theta
    grad = A1 + (M + M.T) @ theta
    return _normal_result(value, grad @ est.fisher_inv @ grad, est.n, alpha, "delta")


# --- restricted bootstrap ----------------------------------------------------

def _orthant_qp(a, Q, c, t0, signs):
    """``min (x-a)^T Q (x-a)`` s.t. ``sum c_i s_i x_i = t0``, ``s_i x_i >= 0``."""
    w = c * signs
    x0 = np.where(signs * a > 0, a, 0.0)
    cons = [
        {"type": "eq", "fun": lambda x: np.array([w @ x - t0]), "jac": lambda x: w[None, :]},
        {"type": "ineq", "fun": lambda x: signs * x, "jac": lambda x: np.diag(signs)},
    ]
    res = scipy.optimize.minimize(
        lambda x: (x - a) @ Q @ (x - a),
        x0,
        jac=lambda x: 2.0 * Q @ (x - a),
        constraints=cons,
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    x = res.x
    x = np.where(signs * x < 0, 0.0, x)
    feas = abs(w @ x - t0)
    return x, float((x - a) @ Q @ (x - a)), feas


def _profile_null(a, Q, c, t0):
    """Minimise the profiled Mahalanobis distance on ``{sum c_i |x_i| = t0}``."""
    if np.all(c > 0) and t0 < 0 or np.all(c < 0) and t0 > 0:
        raise InfeasibleNullError(f"null value {t0} is unreachable for this functional")
    if t0 == 0 and (np.all(c > 0) or np.all(c < 0)):
        return np.zeros_like(a)
    signs = np.where(a >= 0, 1.0, -1.0)
    best = None
    tried = set()
    queue = [signs]
    while queue:
        s = queue.pop()
        key = tuple(s)
        if key in tried:
            continue
        tried.add(key)
        x, val, feas = _orthant_qp(a, Q, c, t0, s)
        if feas > 1e-7:
            continue
        if best is None or val < best[1] - 1e-12:
            best = (x, val)
            # coordinates pinned at zero may prefer the opposite orthant
            for i in np.flatnonzero(np.abs(x) <= 1e-9):
                flipped = s.copy()
                flipped[i] = -flipped[i]
                queue.append(flipped)
        if len(tried) > 64:
            break
    if best is None:
        raise InfeasibleNullError(f"no feasible point found for null value {t0}")
    return best[0]


def constrained_null_mle(est, target, t0):
    """Fisher-metric projection of ``theta_tilde`` onto ``{t(theta) = t0}``.

    Only the coordinates entering ``t`` are optimised; the rest follow from
    the Gaussian regression of the remaining coordinates on them.
    """
    if target.kind not in BOOTSTRAP_KINDS:
        raise ValueError(f"{target.kind} targets are handled by normal intervals")
    slots, c = _abs_coefficients(est.active, target)
    theta = est.theta_tilde
    if slots.size == 0:
        if t0 != 0:
            raise InfeasibleNullError(f"functional is identically zero; null value {t0} unreachable")
        return theta.copy()
    V = est.fisher_inv
    V_JJ = V[np.ix_(slots, slots)]
    Q = matcalc.inv_pd(V_JJ, "Fisher block")
    x = _profile_null(theta[slots], Q, c, float(t0))
    rest = np.setdiff1d(np.arange(theta.size), slots)
    out = theta.copy()
    out[slots] = x
    if rest.size:
        out[rest] = theta[rest] + V[np.ix_(rest, slots)] @ Q @ (x - theta[slots])
    return out


def bootstrap_pvalue(est, target, t0=0.0, N=DEFAULT_DRAWS, rng=None):
    """Restricted parametric bootstrap test of ``t(theta*) = t0``.

    For ``t0 == 0`` the one-sided p-value is the upper-tail frequency
    ``#{t_h >= t_obs} / N``; otherwise the two-sided rule
    ``2 min(lower, upper)`` is used. The smallest reported value is ``1/N``.
    """
    if N < 1000:
        raise ValueError("use at least 1000 bootstrap draws")
    rng = matcalc.make_rng(0 if rng is None else rng)
    active = est.active
    slots, c = _abs_coefficients(active, target)
    t_obs = target_value(target, est.theta_tilde, active)
    if slots.size == 0:
        if t0 != 0:
            raise InfeasibleNullError("functional is identically zero")
        return InferenceResult(t_obs, math.nan, math.nan, 1.0, "bootstrap", N, float(t0))
    null = constrained_null_mle(est, target, t0)
    cov = est.fisher_inv[np.ix_(slots, slots)] / est.n
    draws = matcalc.mvn_sample(matcalc.GaussianSpec(null[slots], cov), rng, N)
    t_draws = np.abs(draws) @ c
    upper = np.count_nonzero(t_draws >= t_obs - NULL_TOL) / N
    if t0 == 0:
        pval = upper
    else:
        lower = np.count_nonzero(t_draws <= t_obs + NULL_TOL) / N
        pval = 2.0 * min(lower, upper)
    pval = float(min(1.0, max(pval, 1.0 / N)))
    return InferenceResult(t_obs, math.nan, math.nan, pval, "bootstrap", N, float(t0))


def strength_estimate(est, j, bridge=False, communities=None):
    comm = communities if bridge else None
    slots = incident_slots(est.active, j, comm)
    return float(np.abs(est.theta_tilde[slots]).sum())


def infer(est, target, t0=0.0, N=DEFAULT_DRAWS, rng=None):
    """Dispatch ``target`` to the matching interval or test."""
    kind = target.kind
    if kind == "edge":
        return edge_interval(est, edge_slot(est.active, *target.nodes), target.alpha)
    if kind in ("expected_influence_1", "bridge_influence"):
        comm = target.communities if target.bridge else None
        w = influence_weights(est.active, target.nodes[0], comm)
        if not w.any():
            raise NoTargetError(f"node {target.nodes[0]} has no selected edge of this kind")
        return linear_functional_interval(est, w, target.alpha)
    if kind == "expected_influence_2":
        return two_step_influence_interval(est, target.nodes[0], target.alpha)
    return bootstrap_pvalue(est, target, t0, N, rng)
