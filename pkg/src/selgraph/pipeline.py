"""End-to-end randomised selection followed by selective inference."""

from dataclasses import dataclass

from . import selection, selective, solver
from .refit import refit


@dataclass
class SelectiveFit:
    solution: solver.GlassoSolution
    event: selection.SelectionEvent
    refit: object
    params: selective.SelectiveParams
    estimate: selective.SelectiveEstimate
    kkt_residual: float

    @property
    def active(self):
        return self.event.active

    @property
    def h_fallback(self):
        return self.refit.h_fallback


def select(X, penalty, randomization=None, rng=None, **solver_kwargs):
    """Randomised (or plain, if ``randomization`` is None) penalised fit on ``X``."""
    S_n = solver.sample_covariance(X)
    n = X.shape[0]
    if randomization is None:
        sol = solver.solve_glasso(S_n, penalty, **solver_kwargs)
    else:
        sol = solver.solve_randomized(S_n, n, penalty, randomization, rng, **solver_kwargs)
    return S_n, sol


INFORMATION = ("model", "empirical")


def fit_selective(X, penalty, randomization, rng=None, information="model", with_loglik=False,
                  elastic_net=None):
    """Randomised graphical lasso, refit on the selected graph, selective MLE.

    ``information="model"`` uses ``H`` in place of the score outer product
    ``J`` (equal in expectation for Gaussian data). The empirical ``J``
    averages ``n`` outer products of ``d``-dimensional scores; when ``d`` is
    comparable to ``n`` its noise leaks into ``C1`` and inflates the
    selective variance by roughly ``(d - |E|)/n``. ``"empirical"`` keeps the
    sandwich form (still falling back to ``H`` when ``n < |E|``).
    """
    if information not in INFORMATION:
        raise ValueError(f"information must be one of {INFORMATION}")
    S_n, sol = select(X, penalty, randomization, rng)
    event = selection.extract_event(sol, S_n)
    resid = selection.kkt_residual(event, sol, S_n)
    state = refit(S_n, event.active, X=X, force_h=information == "model")
    params = selective.randomization_map(state, event, penalty, elastic_net=elastic_net)
    selective.likelihood_params(params, randomization)
    est = selective.selective_mle(params, state.theta_bar, event.active, with_loglik=with_loglik)
    return SelectiveFit(sol, event, state, params, est, resid)
