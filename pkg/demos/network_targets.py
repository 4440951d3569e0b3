"""
Centrality targets on the selected graph
========================================

Node strength, expected influence and the strength difference between two
nodes, computed from the selective MLE of one randomised fit.
"""

import numpy as np

from selgraph import PenaltySpec, RandomizationSpec, TargetSpec, fit_selective, infer, universal_lambda
from selgraph.matcalc import make_rng
from selgraph.sim import generate_scale_free

rng = make_rng(5)
graph = generate_scale_free(40, rng=rng)
X = graph.sample(1000, rng)
n, p = X.shape
fit = fit_selective(X, PenaltySpec(universal_lambda(p, n)), RandomizationSpec(p), rng)

###############################################################################
# Pick the busiest node of the selected graph as the hub and a node with a
# single selected edge as the leaf.

degree = np.zeros(p, dtype=int)
for _, i, j in fit.active.edges():
    degree[i] += 1
    degree[j] += 1
hub = int(np.argmax(degree))
leaf = int(np.flatnonzero(degree == 1)[0]) if np.any(degree == 1) else int(np.argmin(degree))
print(f"hub {hub} (degree {degree[hub]}), leaf {leaf} (degree {degree[leaf]})")

###############################################################################
# Linear and smooth targets get normal intervals; the absolute-value
# functionals are tested with the restricted parametric bootstrap.

for target in (TargetSpec("expected_influence_1", (hub,)),
               TargetSpec("expected_influence_2", (hub,)),
               TargetSpec("node_strength", (hub,)),
               TargetSpec("strength_difference", (hub, leaf))):
    res = infer(fit.estimate, target, t0=0.0, N=5000, rng=1)
    if res.method == "bootstrap":
        print(f"{target.kind:>22}: estimate {res.estimate:.3f}, p = {res.p_value:.4f} (bootstrap)")
    else:
        print(f"{target.kind:>22}: estimate {res.estimate:+.3f}, "
              f"95% CI [{res.ci_lower:+.3f}, {res.ci_upper:+.3f}]")
