"""Random sparse precision matrices for the simulation studies."""

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .. import matcalc

WEIGHT_RANGE = (0.2, 0.8)
PD_MARGIN = 2.0


@dataclass(frozen=True)
class GraphModel:
    """True precision ``theta`` and covariance ``sigma`` (unit diagonal)."""

    theta: np.ndarray
    sigma: np.ndarray
    communities: np.ndarray = None

    @property
    def p(self):
        return self.theta.shape[0]

    @property
    def adjacency(self):
        A = self.theta != 0
        np.fill_diagonal(A, False)
        return A

    @property
    def n_edges(self):
        return int(self.adjacency.sum() // 2)

    @property
    def density(self):
        return self.n_edges / (self.p * (self.p - 1) / 2)

    def sample(self, n, rng):
        spec = matcalc.GaussianSpec(np.zeros(self.p), self.sigma)
        return matcalc.mvn_sample(spec, rng, n)


def _weighted_precision(graph, p, rng, pd_margin=PD_MARGIN):
    """Random signed weights on ``graph``, shifted to PD, scaled to unit-diagonal covariance."""
    W = np.zeros((p, p))
    edges = np.array(sorted(graph.edges()), dtype=np.intp).reshape(-1, 2)
    lo, hi = WEIGHT_RANGE
    w = rng.uniform(lo, hi, size=len(edges)) * rng.choice([-1.0, 1.0], size=len(edges))
    if len(edges):
        W[edges[:, 0], edges[:, 1]] = w
        W[edges[:, 1], edges[:, 0]] = w
    delta = abs(np.linalg.eigvalsh(W)[0]) + pd_margin
    theta0 = W + delta * np.eye(p)
    sigma0 = matcalc.inv_pd(theta0, "generated precision")
    s = np.sqrt(np.diag(sigma0))
    sigma = sigma0 / np.outer(s, s)
    theta = theta0 * np.outer(s, s)
    theta[~((W != 0) | np.eye(p, dtype=bool))] = 0.0
    return 0.5 * (theta + theta.T), 0.5 * (sigma + sigma.T)


def _attachment_mix(p, density):
    """``(m1, m2, prob_m1)`` so a dual preferential-attachment graph hits ``density``."""
    target = density * p * (p - 1) / 2
    # the seed star on k+1 nodes carries k edges; each later node adds m edges
    per_node = lambda k: (target - k) / (p - k - 1)  # noqa: E731
    m_bar = per_node(max(1, math.ceil(per_node(1))))
    m1 = max(1, math.floor(m_bar))
    m2 = m1 + 1
    k = m2
    m_bar = per_node(k)
    prob = min(1.0, max(0.0, m2 - m_bar))
    return m1, m2, prob


def generate_scale_free(p, density=0.1, rng=None, pd_margin=PD_MARGIN):
    """Scale-free precision matrix from a preferential-attachment skeleton.

    Edge weights are uniform on ``+-[0.2, 0.8]``; the diagonal is set to
    ``|lambda_min(W)| + pd_margin`` before rescaling to a unit-diagonal
    covariance, so ``pd_margin`` controls how strong the partial
    correlations are.
    """
    if p < 3:
        raise ValueError("scale-free generator needs p >= 3")
    rng = matcalc.make_rng(0 if rng is None else rng)
    m1, m2, prob = _attachment_mix(p, density)
    if m2 >= p:
        graph = nx.complete_graph(p)
    else:
        graph = nx.dual_barabasi_albert_graph(p, m1, m2, prob, seed=int(rng.integers(2 ** 31)))
    theta, sigma = _weighted_precision(graph, p, rng, pd_margin)
    return GraphModel(theta, sigma)


def generate_modular(p=100, n_communities=4, within_density=0.25, between_density=0.01, rng=None,
                     pd_margin=PD_MARGIN):
    """Block-structured precision matrix; returns a model carrying community labels."""
    if n_communities < 1 or p % n_communities:
        raise ValueError(f"p={p} is not divisible into {n_communities} communities")
    rng = matcalc.make_rng(0 if rng is None else rng)
    size = p // n_communities
    probs = np.full((n_communities, n_communities), between_density)
    np.fill_diagonal(probs, within_density)
    graph = nx.stochastic_block_model([size] * n_communities, probs.tolist(),
                                      seed=int(rng.integers(2 ** 31)))
    graph = nx.Graph(graph)
    theta, sigma = _weighted_precision(graph, p, rng, pd_margin)
    labels = np.repeat(np.arange(n_communities), size)
    return GraphModel(theta, sigma, labels)
