"""Monte-Carlo comparison of selective inference, data splitting and naive inference."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import inference, matcalc, solver
from ..errors import ConfigError, NumericalRankError, SelgraphError
from ..pipeline import fit_selective, select
from ..refit import extract_active_set, refit
from . import graphs
from .graphs import generate_modular, generate_scale_free

METHODS = ("SIR", "DS", "Naive")
GRAPH_KINDS = ("scale_free", "modular")
LAMBDA_RULES = ("universal", "half-universal")
ZERO_TOL = 1e-8
SCALE_FREE_KINDS = ("edge", "node_strength", "expected_influence_1", "expected_influence_2",
                    "strength_difference")
MODULAR_KINDS = ("edge", "bridge_strength", "bridge_influence")


@dataclass
class ScenarioConfig:
    graph_kind: str = "scale_free"
    p: int = 50
    n: int = 1000
    edge_density: float = 0.1
    lambda_rule: str = "universal"
    randomization_sd: float = 1.0
    gamma: float = 1.0
    penalize_diagonal: bool = True
    replications: int = 100
    alpha: float = 0.05
    methods: tuple = METHODS
    master_seed: int = 2024
    target_kinds: tuple = None
    bootstrap_draws: int = inference.DEFAULT_DRAWS
    n_communities: int = 4
    within_density: float = 0.25
    between_density: float = 0.01
    pd_margin: float = graphs.PD_MARGIN
    information: str = "model"

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if self.target_kinds is None:
            self.target_kinds = SCALE_FREE_KINDS if self.graph_kind == "scale_free" else MODULAR_KINDS
        self.target_kinds = tuple(self.target_kinds)
        self.validate()

    def validate(self):
        bad = []
        if self.graph_kind not in GRAPH_KINDS:
            bad.append("graph_kind")
        if not isinstance(self.p, int) or self.p < 3:
            bad.append("p")
        if not isinstance(self.n, int) or self.n < 2:
            bad.append("n")
        if not isinstance(self.lambda_rule, str):
            if not (isinstance(self.lambda_rule, (int, float)) and self.lambda_rule > 0):
                bad.append("lambda_rule")
        elif self.lambda_rule not in LAMBDA_RULES:
            bad.append("lambda_rule")
        if "SIR" in self.methods and not self.randomization_sd > 0:
            bad.append("randomization_sd")
        if not 0.0 <= self.gamma <= 1.0:
            bad.append("gamma")
        if not isinstance(self.replications, int) or self.replications < 1:
            bad.append("replications")
        if not 0.0 < self.alpha < 1.0:
            bad.append("alpha")
        if not self.methods or any(m not in METHODS for m in self.methods):
            bad.append("methods")
        if any(k not in inference.TARGET_KINDS for k in self.target_kinds):
            bad.append("target_kinds")
        if self.bootstrap_draws < 1000:
            bad.append("bootstrap_draws")
        if self.information not in ("model", "empirical"):
            bad.append("information")
        if not self.pd_margin > 0:
            bad.append("pd_margin")
        if self.graph_kind == "modular" and self.p % self.n_communities:
            bad.append("n_communities")
        if bad:
            raise ConfigError(f"invalid scenario settings: {', '.join(bad)}", keys=bad)

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(unknown)}", keys=unknown)
        return cls(**data)

    def to_dict(self):
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["target_kinds"] = list(self.target_kinds)
        return out

    def lam(self, n):
        if not isinstance(self.lambda_rule, str):
            return float(self.lambda_rule)
        if self.lambda_rule == "universal":
            return solver.universal_lambda(self.p, n)
        return solver.half_universal_lambda(self.p, n)


@dataclass
class ReplicationRecord:
    method: str
    replication: int
    f1: float = math.nan
    target_error: float = math.nan
    hits: dict = field(default_factory=dict)
    lengths: dict = field(default_factory=dict)
    refit_failed: bool = False
    failure: str = ""
    excluded: int = 0
    n_selected: int = 0
    h_fallback: bool = False


def f1_score(active, theta_true):
    """``TP / (TP + (FP + FN)/2)`` over off-diagonal positions."""
    p = active.p
    rows, cols = matcalc.vech_indices(p)
    off = rows != cols
    truth = (np.abs(matcalc.vech(theta_true)) > 0) & off
    sel = active.mask & off
    tp = np.count_nonzero(truth & sel)
    fp = np.count_nonzero(~truth & sel)
    fn = np.count_nonzero(truth & ~sel)
    denom = tp + (fp + fn) / 2.0
    return tp / denom if denom > 0 else 1.0


def target_error(active, theta_true, theta_star):
    """Share of selected edges that are absent in truth but nonzero in the pseudo-truth."""
    slots = active.edge_slots()
    if slots.size == 0:
        return 0.0
    true_vals = matcalc.vech(theta_true)[active.E[slots]]
    bad = (np.abs(theta_star[slots]) > ZERO_TOL) & (true_vals == 0)
    return float(np.mean(bad))


def _graph(config, rng):
    if config.graph_kind == "scale_free":
        return generate_scale_free(config.p, config.edge_density, rng, config.pd_margin)
    return generate_modular(config.p, config.n_communities, config.within_density,
                            config.between_density, rng, config.pd_margin)


def _targets(config, active, graph, rng):
    """Targets evaluated in one replication, with the node pairs drawn from ``rng``."""
    out = []
    kinds = config.target_kinds
    if "edge" in kinds:
        out += [inference.TargetSpec("edge", (i, j), alpha=config.alpha)
                for _, i, j in active.edges()]
    connected = [j for j in range(active.p) if inference.incident_slots(active, j).size]
    for kind in ("node_strength", "expected_influence_1", "expected_influence_2"):
        if kind in kinds:
            out += [inference.TargetSpec(kind, (j,), alpha=config.alpha) for j in connected]
    if "strength_difference" in kinds and len(connected) >= 2:
        j, k = rng.choice(connected, size=2, replace=False)
        out.append(inference.TargetSpec("strength_difference", (int(j), int(k)), alpha=config.alpha))
    comm = graph.communities
    if comm is not None:
        bridging = [j for j in range(active.p)
                    if inference.incident_slots(active, j, comm).size]
        for kind in ("bridge_strength", "bridge_influence"):
            if kind in kinds:
                out += [inference.TargetSpec(kind, (j,), comm, config.alpha) for j in bridging]
    return out


def _evaluate(record, est, theta_star, targets, config, rng):
    active = est.active
    for target in targets:
        truth = inference.target_value(target, theta_star, active)
        if target.kind in inference.BOOTSTRAP_KINDS:
            t0 = 0.0 if abs(truth) <= ZERO_TOL else truth
            res = inference.bootstrap_pvalue(est, target, t0, config.bootstrap_draws, rng)
            hit = res.p_value > config.alpha
        else:
            res = inference.infer(est, target)
            hit = res.covers(truth)
            record.lengths.setdefault(target.kind, []).append(res.length)
        record.hits.setdefault(target.kind, []).append(int(hit))


def _finish(record, active, graph, theta_star):
    record.f1 = f1_score(active, graph.theta)
    record.target_error = target_error(active, graph.theta, theta_star)
    record.n_selected = len(active.edges())


def _sir(config, graph, X, rng, rep):
    rec = ReplicationRecord("SIR", rep)
    penalty = solver.PenaltySpec(config.lam(config.n), config.gamma, config.penalize_diagonal)
    rand = solver.RandomizationSpec(config.p, sd=config.randomization_sd)
    try:
        fit = fit_selective(X, penalty, rand, rng, information=config.information)
        theta_star = inference.pseudo_true_target(graph.theta, fit.active)
    except SelgraphError as exc:
        rec.refit_failed, rec.failure = True, f"{exc.stage}: {exc}"
        return rec
    rec.h_fallback = fit.h_fallback
    _finish(rec, fit.active, graph, theta_star)
    _evaluate(rec, fit.estimate, theta_star, _targets(config, fit.active, graph, rng), config, rng)
    return rec


def _fixed_model(method, config, graph, X_select, X_infer, rng, rep, allow_fallback):
    """Non-randomised selection on ``X_select``, unconditional inference on ``X_infer``.

    Naive inference passes the same data twice; data splitting passes two halves.
    """
    rec = ReplicationRecord(method, rep)
    n_sel = X_select.shape[0]
    lam = solver.half_universal_lambda(config.p, n_sel)
    penalty = solver.PenaltySpec(lam, config.gamma, config.penalize_diagonal)
    try:
        _, sol = select(X_select, penalty)
        active = extract_active_set(sol)
        n_inf = X_infer.shape[0]
        if not allow_fallback and n_inf < active.size_E:
            raise NumericalRankError(
                f"sandwich variance has rank at most {n_inf} < |E| = {active.size_E}"
            )
        S_inf = solver.sample_covariance(X_infer)
        state = refit(S_inf, active, X=X_infer)
        est = inference.unconditional_estimate(state)
        theta_star = inference.pseudo_true_target(graph.theta, active)
    except SelgraphError as exc:
        rec.refit_failed, rec.failure = True, f"{exc.stage}: {exc}"
        return rec
    rec.h_fallback = state.h_fallback
    _finish(rec, active, graph, theta_star)
    _evaluate(rec, est, theta_star, _targets(config, active, graph, rng), config, rng)
    return rec


def run_replication(config, seed, rep=0):
    """All requested methods on one simulated data set.

    ``seed`` (an int or SeedSequence) fixes the graph, the data, the
    randomisation and every bootstrap draw.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    data_seed, *method_seeds = ss.spawn(1 + len(METHODS))
    data_rng = matcalc.make_rng(data_seed)
    graph = _graph(config, data_rng)
    X = graph.sample(config.n, data_rng)
    half = config.n // 2
    records = []
    for method, mseed in zip(METHODS, method_seeds):
        if method not in config.methods:
            continue
        rng = matcalc.make_rng(mseed)
        if method == "SIR":
            records.append(_sir(config, graph, X, rng, rep))
        elif method == "DS":
            records.append(_fixed_model("DS", config, graph, X[:half], X[half:], rng, rep, False))
        else:
            records.append(_fixed_model("Naive", config, graph, X, X, rng, rep, True))
    return records


def run_scenario(config, progress=None):
    seeds = matcalc.spawn_seeds(config.master_seed, config.replications)
    records = []
    for rep, seed in enumerate(seeds):
        records.extend(run_replication(config, seed, rep))
        if progress is not None:
            progress(rep + 1, config.replications)
    return records


def _ratio(num, den):
    """Pooled ratio ``sum num / sum den`` with a replication-clustered standard error."""
    num, den = np.asarray(num, float), np.asarray(den, float)
    total = den.sum()
    if total == 0:
        return math.nan, math.nan
    r = num.sum() / total
    k = den.size
    if k < 2:
        return float(r), math.nan
    resid = num - r * den
    se = math.sqrt(k / (k - 1) * np.sum(resid ** 2)) / total
    return float(r), float(se)


def _mean(values):
    v = np.asarray(values, float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


def aggregate(records):
    """Summary rows ``{method, metric, target_kind, value, mc_se, n_replications}``."""
    rows = []
    for method in METHODS:
        recs = [r for r in records if r.method == method]
        if not recs:
            continue
        ok = [r for r in recs if not r.refit_failed]
        n_ok = len(ok)

        def row(metric, kind, value, se, count=n_ok):
            rows.append({"method": method, "metric": metric, "target_kind": kind,
                         "value": value, "mc_se": se, "n_replications": count})

        row("failed", "", float(len(recs) - n_ok), math.nan, len(recs))
        if not ok:
            continue
        row("F1", "", *_mean([r.f1 for r in ok]))
        row("target_error", "", *_mean([r.target_error for r in ok]))
        kinds = sorted({k for r in ok for k in r.hits})
        for kind in kinds:
            num = [sum(r.hits.get(kind, [])) for r in ok]
            den = [len(r.hits.get(kind, [])) for r in ok]
            row("coverage", kind, *_ratio(num, den))
            if any(kind in r.lengths for r in ok):
                lnum = [sum(r.lengths.get(kind, [])) for r in ok]
                row("length", kind, *_ratio(lnum, den))
        row("h_fallback", "", *_mean([float(r.h_fallback) for r in ok]))
    return rows


def lookup(rows, method, metric, kind=""):
    for r in rows:
        if r["method"] == method and r["metric"] == metric and r["target_kind"] == kind:
            return r["value"]
    return math.nan


SUMMARY_FIELDS = ("method", "metric", "target_kind", "value", "mc_se", "n_replications")


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\r\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def rows_to_json(rows, config=None):
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    payload = {"rows": [{k: clean(v) for k, v in r.items()} for r in rows]}
    if config is not None:
        payload["config"] = config.to_dict()
    return json.dumps(payload, indent=2, sort_keys=True)


def format_table(rows):
    """Plain-text table in the layout of a coverage study."""
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    keys = []
    for r in rows:
        key = (r["metric"], r["target_kind"])
        if key not in keys and r["metric"] != "h_fallback":
            keys.append(key)
    width = max(len(f"{m} {k}".strip()) for m, k in keys) + 2 if keys else 10
    lines = ["".ljust(width) + "".join(m.rjust(10) for m in methods)]
    for metric, kind in keys:
        label = f"{metric} {kind}".strip()
        vals = []
        for m in methods:
            v = lookup(rows, m, metric, kind)
            vals.append("-".rjust(10) if isinstance(v, float) and math.isnan(v) else f"{v:10.3f}")
        lines.append(label.ljust(width) + "".join(vals))
    return "\n".join(lines)
