import numpy as np
import pytest
from sklearn.covariance import graphical_lasso

from selgraph import matcalc, solver
from selgraph.errors import InsufficientDataError
from selgraph.selection import extract_event, kkt_residual
from selgraph.sim import generate_scale_free


def _data(p, n, seed):
    rng = matcalc.make_rng(seed)
    graph = generate_scale_free(p, rng=rng)
    X = graph.sample(n, rng)
    return graph, X, solver.sample_covariance(X)


def test_lambda_rules():
    assert solver.universal_lambda(50, 1000) == pytest.approx(np.sqrt(2 * np.log(50) / 1000))
    assert solver.half_universal_lambda(50, 1000) == pytest.approx(np.sqrt(np.log(50) / 1000))


def test_penalty_validation():
    with pytest.raises(ValueError):
        solver.PenaltySpec(0.0)
    with pytest.raises(ValueError):
        solver.PenaltySpec(0.1, gamma=1.5)


@pytest.mark.parametrize("seed", range(3))
def test_matches_sklearn_with_unpenalised_diagonal(seed):
    _, _, S = _data(8, 300, seed)
    lam = 0.08
    sol = solver.solve_glasso(S, solver.PenaltySpec(lam, penalize_diagonal=False), tol=1e-9)
    _, ref = graphical_lasso(S, alpha=lam, tol=1e-12, enet_tol=1e-12, max_iter=2000)
    np.testing.assert_allclose(sol.theta_hat, ref, atol=1e-5)


def test_identity_covariance_with_huge_lambda_is_diagonal():
    S = np.eye(4)
    sol = solver.solve_glasso(S, solver.PenaltySpec(10.0, penalize_diagonal=False))
    np.testing.assert_allclose(sol.theta_hat, np.eye(4), atol=1e-10)


def test_diagonal_penalty_shrinks_diagonal():
    S = np.eye(3)
    sol = solver.solve_glasso(S, solver.PenaltySpec(0.5))
    # 1 + lam - 1/theta = 0 on the diagonal
    np.testing.assert_allclose(np.diag(sol.theta_hat), 1 / 1.5, atol=1e-8)


def test_randomization_matrix_scaling():
    omega_n = np.arange(1.0, 7.0)
    W = solver.randomization_matrix(omega_n)
    np.testing.assert_allclose(0.5 * matcalc.dup_t_vec(W), omega_n)


@pytest.mark.parametrize("gamma", [1.0, 0.5])
@pytest.mark.parametrize("seed", range(4))
def test_kkt_residual_on_converged_solves(gamma, seed):
    _, X, S = _data(12, 400, seed)
    n, p = X.shape
    penalty = solver.PenaltySpec(solver.universal_lambda(p, n), gamma)
    sol = solver.solve_randomized(S, n, penalty, solver.RandomizationSpec(p), matcalc.make_rng(seed))
    assert sol.converged
    event = extract_event(sol, S)
    assert kkt_residual(event, sol, S) <= 1e-6
    assert np.max(np.abs(event.U)) <= 1.0 + 1e-6


def test_objective_trace_is_monotone():
    _, X, S = _data(15, 200, 11)
    penalty = solver.PenaltySpec(solver.universal_lambda(15, 200))
    sol = solver.solve_randomized(S, 200, penalty, solver.RandomizationSpec(15), matcalc.make_rng(2))
    trace = np.array(sol.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10 * np.abs(trace[:-1]))


def test_high_dimensional_solve_converges():
    _, X, S = _data(60, 30, 3)
    penalty = solver.PenaltySpec(solver.universal_lambda(60, 30))
    sol = solver.solve_randomized(S, 30, penalty, solver.RandomizationSpec(60), matcalc.make_rng(0))
    assert sol.converged and matcalc.is_pd(sol.theta_hat)


def test_zero_noise_randomization_is_plain_glasso():
    _, _, S = _data(6, 200, 5)
    pen = solver.PenaltySpec(0.1)
    a = solver.solve_glasso(S, pen)
    b = solver.solve_randomized(S, 200, pen, solver.RandomizationSpec(6, zero_noise=True))
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)


def test_sample_covariance_requires_two_rows():
    with pytest.raises(InsufficientDataError):
        solver.sample_covariance(np.zeros((1, 3)))


def test_sample_covariance_examples(rng):
    X = np.sqrt(3) * np.eye(3)
    np.testing.assert_allclose(solver.sample_covariance(X), np.eye(3))
    np.testing.assert_allclose(solver.sample_covariance(np.array([[1.0], [-1.0]])), [[1.0]])
    X = rng.standard_normal((50, 5))
    S = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            S[i, j] = sum(X[h, i] * X[h, j] for h in range(50)) / 50
    np.testing.assert_allclose(solver.sample_covariance(X), S, atol=1e-12)


def test_randomization_draws():
    spec = solver.RandomizationSpec(2, zero_noise=True)
    W, omega = solver.make_randomization(spec, 100)
    assert not W.any() and not omega.any()
    spec = solver.RandomizationSpec(2, seed=4)
    W1, o1 = solver.make_randomization(spec, 100)
    W2, o2 = solver.make_randomization(spec, 100)
    assert np.array_equal(W1, W2)
    assert np.array_equal(0.5 * matcalc.dup_t_vec(W1), o1)


def test_p2_solution_matches_grid_search():
    S = np.array([[1.0, 0.6], [0.6, 1.3]])
    lam = 0.2
    pen = solver.PenaltySpec(lam)
    sol = solver.solve_glasso(S, pen, tol=1e-10)

    def f(a, b, c):
        det = a * c - b * b
        ok = (a > 0) & (det > 0)
        val = a * S[0, 0] + 2 * b * S[0, 1] + c * S[1, 1] - np.log(np.where(ok, det, 1.0))
        val += lam * (np.abs(a) + 2 * np.abs(b) + np.abs(c))
        return np.where(ok, val, np.inf)

    t = sol.theta_hat
    grids = [np.linspace(v - 0.05, v + 0.05, 101) for v in (t[0, 0], t[1, 0], t[1, 1])]
    A, B, C = np.meshgrid(*grids, indexing="ij")
    best = f(A, B, C).min()
    assert f(t[0, 0], t[1, 0], t[1, 1]) <= best + 1e-4


def test_decoupled_diagonal_solution_large_lambda():
    for diag in (True, False):
        sol = solver.solve_glasso(np.eye(3), solver.PenaltySpec(5.0, penalize_diagonal=diag))
        expected = 1 / (1 + 5.0 * diag)
        np.testing.assert_allclose(sol.theta_hat, expected * np.eye(3), atol=1e-10)
