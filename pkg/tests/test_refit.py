import numpy as np
import pytest

from selgraph import matcalc
from selgraph.errors import RefitError
from selgraph.refit import (ActiveSet, compute_H, compute_J, constrained_mle, refit,
                            score_matrix)

from conftest import random_spd


def _half_loss(theta_vec, S):
    Theta = matcalc.unvech(theta_vec)
    return 0.5 * (np.sum(S * Theta) - np.linalg.slogdet(Theta)[1])


def test_active_set_edges_and_slots_align():
    active = ActiveSet.from_edges(4, [(2, 0), (3, 1)])
    lookup = matcalc.position_lookup(4)
    edges = active.edges()
    assert [(i, j) for _, i, j in edges] == [(2, 0), (3, 1)]
    assert [k for k, _, _ in edges] == [lookup[i, j] for _, i, j in edges]
    assert [k for k, _, _ in edges] == list(active.E[active.edge_slots()])
    with pytest.raises(ValueError):
        ActiveSet(np.array([0]), np.arange(1, 10), 4)


def test_hessian_matches_finite_differences(rng):
    p = 4
    Theta = np.linalg.inv(random_spd(p, rng))
    S = random_spd(p, rng)
    theta = matcalc.vech(Theta)
    H = compute_H(Theta)
    d, h = theta.size, 1e-5
    fd = np.zeros((d, d))
    for a in range(d):
        e = np.zeros(d)
        e[a] = h
        ga = 0.5 * matcalc.dup_t_vec(S - np.linalg.inv(matcalc.unvech(theta + e)))
        gb = 0.5 * matcalc.dup_t_vec(S - np.linalg.inv(matcalc.unvech(theta - e)))
        fd[:, a] = (ga - gb) / (2 * h)
    np.testing.assert_allclose(H, fd, rtol=1e-6, atol=1e-7)
    # and the gradient against the loss itself
    g = 0.5 * matcalc.dup_t_vec(S - np.linalg.inv(Theta))
    fd_g = [(_half_loss(theta + h * np.eye(d)[a], S) - _half_loss(theta - h * np.eye(d)[a], S)) / (2 * h)
            for a in range(d)]
    np.testing.assert_allclose(g, fd_g, rtol=1e-6, atol=1e-8)


def test_score_average_is_gradient(rng):
    p, n = 3, 50
    Theta = np.linalg.inv(random_spd(p, rng))
    X = rng.standard_normal((n, p))
    G = score_matrix(Theta, X)
    S = X.T @ X / n
    np.testing.assert_allclose(G.mean(0), 0.5 * matcalc.dup_t_vec(S - np.linalg.inv(Theta)), atol=1e-12)


def test_bartlett_identity_in_large_samples():
    rng = np.random.default_rng(3)
    p = 4
    Sigma = random_spd(p, rng)
    Theta = np.linalg.inv(Sigma)
    X = rng.multivariate_normal(np.zeros(p), Sigma, size=400_000)
    J = compute_J(Theta, X)
    H = compute_H(Theta)
    assert np.max(np.abs(J - H)) / np.max(np.abs(H)) < 0.02


def test_constrained_mle_zero_pattern_and_stationarity(rng):
    p = 5
    S = random_spd(p, rng)
    active = ActiveSet.from_edges(p, [(1, 0), (2, 1), (4, 3)])
    Theta = constrained_mle(S, active)
    theta = matcalc.vech(Theta)
    assert np.all(theta[active.E_complement] == 0)
    grad = matcalc.dup_t_vec(S - np.linalg.inv(Theta))
    assert np.max(np.abs(grad[active.E])) < 1e-8


def test_full_active_set_refit_is_inverse_covariance(rng):
    S = random_spd(4, rng)
    Theta = constrained_mle(S, ActiveSet.full(4))
    np.testing.assert_allclose(Theta, np.linalg.inv(S), atol=1e-9)


def test_refit_fails_when_mle_does_not_exist():
    S = np.zeros((3, 3))
    with pytest.raises(RefitError):
        constrained_mle(S, ActiveSet.full(3))


@pytest.mark.parametrize("force_h", [False, True])
def test_nuisance_is_asymptotically_uncorrelated_with_refit(force_h):
    rng = np.random.default_rng(7)
    p, n, reps = 4, 400, 2000
    active = ActiveSet.from_edges(p, [(1, 0), (3, 2)])
    Theta_true = np.eye(p)
    Theta_true[1, 0] = Theta_true[0, 1] = 0.4
    Theta_true[3, 2] = Theta_true[2, 3] = -0.3
    Sigma = np.linalg.inv(Theta_true)
    draws_bar, draws_perp = [], []
    for _ in range(reps):
        X = rng.multivariate_normal(np.zeros(p), Sigma, size=n)
        state = refit(X.T @ X / n, active, X=X, force_h=force_h)
        draws_bar.append(state.theta_bar)
        draws_perp.append(state.theta_perp)
    A = np.array(draws_bar)
    B = np.array(draws_perp)
    k1, k2 = A.shape[1], B.shape[1]
    corr = np.corrcoef(A.T, B.T)[:k1, k1:]
    # operator norm of a k1 x k2 matrix of pure noise is about (sqrt k1 + sqrt k2)/sqrt(reps)
    floor = (np.sqrt(k1) + np.sqrt(k2)) / np.sqrt(reps)
    assert np.linalg.norm(corr, 2) < 2.5 * floor


def test_refit_h_fallback_flags():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((5, 6))
    active = ActiveSet.full(6)
    X = np.vstack([X, rng.standard_normal((30, 6))])
    state = refit(X.T @ X / len(X), active, X=X[:5], n=5)
    assert state.h_fallback
    np.testing.assert_allclose(state.Sigma_E, np.linalg.inv(state.H_EE), atol=1e-10)
    forced = refit(X.T @ X / len(X), active, X=X, force_h=True)
    assert forced.h_fallback


def test_hessian_at_identity():
    H = compute_H(np.eye(2))
    np.testing.assert_allclose(H, np.diag([0.5, 1.0, 0.5]))


def test_hessian_permutation_conjugation(rng):
    p = 4
    Theta = np.linalg.inv(random_spd(p, rng))
    perm = rng.permutation(p)
    lookup = matcalc.position_lookup(p)
    rows, cols = matcalc.vech_indices(p)
    # vech position of (perm i, perm j) for every original position
    pi = np.array([lookup[perm[r], perm[c]] for r, c in zip(rows, cols)])
    H = compute_H(Theta)
    Hp = compute_H(Theta[np.ix_(np.argsort(perm), np.argsort(perm))])
    np.testing.assert_allclose(Hp[np.ix_(pi, pi)], H, atol=1e-12)


def test_score_outer_product_single_observation_has_rank_one(rng):
    Theta = np.linalg.inv(random_spd(3, rng))
    J = compute_J(Theta, rng.standard_normal((1, 3)))
    assert np.linalg.matrix_rank(J, tol=1e-10) == 1


def test_score_outer_product_matches_loop(rng):
    p, n = 3, 20
    Theta = np.linalg.inv(random_spd(p, rng))
    X = rng.standard_normal((n, p))
    Sigma = np.linalg.inv(Theta)
    J = np.zeros((6, 6))
    for h in range(n):
        g = 0.5 * matcalc.dup_t_vec(np.outer(X[h], X[h]) - Sigma)
        J += np.outer(g, g) / n
    np.testing.assert_allclose(compute_J(Theta, X), J, atol=1e-12)


def test_diagonal_only_refit(rng):
    S = random_spd(4, rng)
    Theta = constrained_mle(S, ActiveSet.from_edges(4, []))
    np.testing.assert_allclose(Theta, np.diag(1 / np.diag(S)), atol=1e-12)


def test_chain_refit_matches_generic_optimiser(rng):
    import scipy.optimize
    S = random_spd(3, rng)
    active = ActiveSet.from_edges(3, [(1, 0), (2, 1)])
    Theta = constrained_mle(S, active, tol=1e-12)

    def loss(z):
        full = np.zeros(6)
        full[active.E] = z
        T = matcalc.unvech(full)
        sign, logdet = np.linalg.slogdet(T)
        return 1e10 if sign <= 0 else np.sum(S * T) - logdet

    z0 = matcalc.vech(np.diag(1 / np.diag(S)))[active.E]
    res = scipy.optimize.minimize(loss, z0, method="BFGS", options={"gtol": 1e-12})
    np.testing.assert_allclose(matcalc.vech(Theta)[active.E], res.x, atol=1e-6)


def test_full_active_set_has_empty_nuisance(rng):
    S = random_spd(3, rng)
    X = rng.multivariate_normal(np.zeros(3), S, size=50)
    state = refit(X.T @ X / 50, ActiveSet.full(3), X=X)
    assert state.theta_perp.size == 0


def test_nuisance_block_algebra(rng):
    p, n = 4, 200
    X = rng.multivariate_normal(np.zeros(p), random_spd(p, rng), size=n)
    S = X.T @ X / n
    active = ActiveSet.from_edges(p, [(1, 0), (3, 1)])
    state = refit(S, active, X=X)
    E, Ec = active.E, active.E_complement
    H = compute_H(state.theta_bar_mat)
    J = compute_J(state.theta_bar_mat, X)
    A = H[np.ix_(Ec, E)] - J[np.ix_(Ec, E)] @ np.linalg.inv(J[np.ix_(E, E)]) @ H[np.ix_(E, E)]
    grad = 0.5 * matcalc.dup_t_vec(S - np.linalg.inv(state.theta_bar_mat))
    np.testing.assert_allclose(state.A_E, A, atol=1e-10)
    np.testing.assert_allclose(state.theta_perp, grad[Ec] - A @ state.theta_bar, atol=1e-10)
    Hi = np.linalg.inv(H[np.ix_(E, E)])
    np.testing.assert_allclose(state.Sigma_E, Hi @ J[np.ix_(E, E)] @ Hi, atol=1e-10)
