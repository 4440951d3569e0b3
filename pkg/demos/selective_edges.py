"""
Edge intervals after randomised selection
=========================================

Fit a randomised graphical lasso to data from a sparse scale-free graph,
then compare selective intervals for the selected edges with the naive
intervals that ignore selection.
"""

import numpy as np

from selgraph import PenaltySpec, RandomizationSpec, fit_selective, universal_lambda
from selgraph.inference import edge_interval, pseudo_true_target, unconditional_estimate
from selgraph.matcalc import make_rng
from selgraph.sim import generate_scale_free

###############################################################################
# A 30-node graph with roughly 10% of the possible edges, and 600 samples.

rng = make_rng(11)
graph = generate_scale_free(30, rng=rng)
X = graph.sample(600, rng)
n, p = X.shape
print(f"{graph.n_edges} true edges among {p} nodes")

###############################################################################
# Selection uses ``lambda = sqrt(2 log p / n)`` and unit-variance
# randomisation. The fit carries the selection event, the refit on the
# selected graph and the selective MLE.

penalty = PenaltySpec(universal_lambda(p, n))
fit = fit_selective(X, penalty, RandomizationSpec(p), rng)
edges = fit.active.edges()
print(f"{len(edges)} edges selected, KKT residual {fit.kkt_residual:.1e}")

###############################################################################
# Targets are the pseudo-true values: the best approximation to the truth
# among precision matrices supported on the selected graph.

truth = pseudo_true_target(graph.theta, fit.active)
naive = unconditional_estimate(fit.refit)

hits = {"selective": 0, "naive": 0}
widths = {"selective": [], "naive": []}
for slot, (_, i, j) in zip(fit.active.edge_slots(), edges):
    for name, est in (("selective", fit.estimate), ("naive", naive)):
        res = edge_interval(est, slot)
        hits[name] += res.ci_lower <= truth[slot] <= res.ci_upper
        widths[name].append(res.length)

for name in hits:
    print(f"{name:>9}: covered {hits[name]}/{len(edges)}, mean length {np.mean(widths[name]):.3f}")

###############################################################################
# The first few selected edges side by side.

for slot, (_, i, j) in list(zip(fit.active.edge_slots(), edges))[:6]:
    s = edge_interval(fit.estimate, slot)
    v = edge_interval(naive, slot)
    print(f"({j:2d},{i:2d})  target {truth[slot]:+.3f}  "
          f"selective [{s.ci_lower:+.3f}, {s.ci_upper:+.3f}]  naive [{v.ci_lower:+.3f}, {v.ci_upper:+.3f}]")
