import numpy as np
import pytest

from selgraph import matcalc, solver
from selgraph.errors import KKTViolationError
from selgraph.selection import extract_event, kkt_residual, recover_subgradient
from selgraph.sim import generate_scale_free


def _solve(seed, gamma=1.0, p=8, n=300):
    rng = matcalc.make_rng(seed)
    graph = generate_scale_free(p, rng=rng)
    X = graph.sample(n, rng)
    S = solver.sample_covariance(X)
    pen = solver.PenaltySpec(solver.universal_lambda(p, n), gamma)
    return S, solver.solve_randomized(S, n, pen, solver.RandomizationSpec(p), rng)


@pytest.mark.parametrize("gamma", [1.0, 0.3])
def test_event_signs_and_subgradients(gamma):
    S, sol = _solve(1, gamma)
    event = extract_event(sol, S)
    theta = sol.theta_vech
    np.testing.assert_array_equal(event.S * event.B, theta[event.active.E])
    assert np.all(event.B > 0)
    # the recovered subgradient reproduces the active signs
    u = recover_subgradient(sol.theta_hat, sol.omega_n, S, sol.penalty)
    np.testing.assert_allclose(u[event.active.E], event.S, atol=1e-5)
    assert kkt_residual(event, sol, S) <= 1e-6


def test_loose_solution_is_rejected():
    S, sol = _solve(2)
    bad = solver.GlassoSolution(sol.theta_hat, sol.W_n, sol.omega_n + 0.5, sol.penalty, True, 1, 0.0)
    with pytest.raises(KKTViolationError):
        extract_event(bad, S)


def test_active_set_matches_solver_zeros():
    from selgraph.refit import extract_active_set
    for seed in range(20):
        S, sol = _solve(100 + seed)
        active = extract_active_set(sol)
        np.testing.assert_array_equal(active.mask, sol.theta_vech != 0)


def test_diagonal_event_and_p2_active_edge():
    pen = solver.PenaltySpec(5.0)
    sol = solver.solve_glasso(np.eye(3), pen)
    event = extract_event(sol, np.eye(3))
    np.testing.assert_array_equal(event.active.E, matcalc.diag_positions(3))
    np.testing.assert_array_equal(event.S, 1.0)
    assert kkt_residual(event, sol, np.eye(3)) < 1e-10
    S = np.array([[1.0, 0.7], [0.7, 1.0]])
    sol = solver.solve_glasso(S, solver.PenaltySpec(0.1))
    assert extract_event(sol, S).active.size_E == 3


def test_hand_kkt_subgradient_p2():
    S = np.array([[1.0, 0.05], [0.05, 1.0]])
    omega_n = np.array([0.01, 0.02, -0.03])
    lam = 0.3
    sol = solver.solve_glasso(S, solver.PenaltySpec(lam), solver.randomization_matrix(omega_n),
                              omega_n=omega_n, tol=1e-12)
    event = extract_event(sol, S)
    assert event.active.size_E == 2
    Sigma = np.linalg.inv(sol.theta_hat)
    grad_offdiag = S[1, 0] - Sigma[1, 0]  # half of the doubled vech gradient
    assert event.U[0] == pytest.approx((-grad_offdiag + omega_n[1]) / lam, abs=1e-8)


def test_kkt_residual_is_sensitive_to_perturbation():
    S, sol = _solve(3)
    event = extract_event(sol, S)
    assert kkt_residual(event, sol, S) < 1e-6
    bumped = sol.theta_hat.copy()
    E = event.active.E
    rows, cols = matcalc.vech_indices(sol.p)
    k = E[0]
    bumped[rows[k], cols[k]] += 1e-2
    bumped[cols[k], rows[k]] = bumped[rows[k], cols[k]]
    moved = solver.GlassoSolution(bumped, sol.W_n, sol.omega_n, sol.penalty, True, 0, 0.0)
    assert kkt_residual(event, moved, S) > 1e-4
