import numpy as np
import pytest

from selgraph import matcalc, solver
from selgraph.pipeline import fit_selective
from selgraph.sim import generate_scale_free


def random_spd(p, rng, scale=1.0):
    A = rng.standard_normal((p, p))
    return scale * (A @ A.T / p + np.eye(p))


def simulated_fit(p=10, n=1000, seed=0, gamma=1.0, information="model", pd_margin=2.0):
    rng = matcalc.make_rng(seed)
    graph = generate_scale_free(p, rng=rng, pd_margin=pd_margin)
    X = graph.sample(n, rng)
    penalty = solver.PenaltySpec(solver.universal_lambda(p, n), gamma)
    fit = fit_selective(X, penalty, solver.RandomizationSpec(p), rng, information=information)
    return graph, X, fit


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
