"""Command-line entry point: ``selgraph analyze`` and ``selgraph simulate``.

Exit codes: 0 on success, 1 when the pipeline raises, 2 for configuration
problems (unreadable or invalid config, unknown keys).
"""

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import inference, matcalc, solver
from .errors import ConfigError, IngestError, SelgraphError
from .pipeline import INFORMATION, fit_selective
from .sim import harness

ANALYZE_KEYS = {
    "input_path", "lambda", "gamma", "randomization_sd", "seed", "alpha", "targets",
    "communities_path", "output_path", "penalize_diagonal", "bootstrap_draws", "information",
}
TARGET_KEYS = {"kind", "nodes", "null_value"}


# --- ingestion ----------------------------------------------------------------

def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def ingest_csv(path):
    """Read a numeric CSV, centre each column and scale it to unit sample variance.

    Returns ``(X, info)`` where ``info`` records column names, means and
    standard deviations.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise IngestError(f"{path} is empty")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    width = len(header) if header else len(rows[0]) if rows else 0
    names = header or [f"column {k + 1}" for k in range(width)]
    data = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise IngestError(f"row {r + 1} has {len(row)} fields, expected {width}")
        for k, cell in enumerate(row):
            try:
                data[r, k] = float(cell)
            except ValueError:
                raise IngestError(
                    f"non-numeric value {cell!r} in {names[k]} (row {r + 1})"
                ) from None
    if not np.all(np.isfinite(data)):
        k = int(np.flatnonzero(~np.all(np.isfinite(data), axis=0))[0])
        raise IngestError(f"non-finite value in {names[k]}")
    if data.shape[0] < 2:
        raise IngestError("need at least two rows of data")
    if width < 2:
        raise IngestError("need at least two columns")
    mean = data.mean(axis=0)
    sd = data.std(axis=0, ddof=1)
    for k in range(width):
        if sd[k] == 0 or np.all(data[:, k] == data[0, k]):
            raise IngestError(f"{names[k]} has zero variance")
    X = (data - mean) / sd
    info = {"columns": names, "means": mean.tolist(), "scales": sd.tolist(),
            "transform": "centered and scaled to unit sample variance"}
    return X, info


def read_communities(path, p):
    """Two-column CSV ``node, community`` (0-based node indices) covering all ``p`` nodes."""
    labels = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for r, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if r == 0 and not _is_number(row[0]):
                continue
            if len(row) != 2:
                raise IngestError(f"community file row {r + 1} must have two fields")
            labels[int(row[0])] = row[1].strip()
    missing = sorted(set(range(p)) - set(labels))
    if missing:
        raise IngestError(f"community labels missing for nodes {missing[:10]}")
    names = sorted(set(labels.values()))
    return np.array([names.index(labels[j]) for j in range(p)])


# --- configuration ------------------------------------------------------------

def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values")
    return data


@dataclass
class AnalysisConfig:
    input_path: str
    lam: object = "universal"
    gamma: float = 1.0
    randomization_sd: float = 1.0
    seed: int = None
    alpha: float = 0.05
    targets: list = field(default_factory=list)
    communities_path: str = None
    output_path: str = "report"
    penalize_diagonal: bool = True
    bootstrap_draws: int = inference.DEFAULT_DRAWS
    information: str = "model"

    @classmethod
    def from_dict(cls, data, base_dir=None):
        unknown = sorted(set(data) - ANALYZE_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}", keys=unknown)
        if "input_path" not in data:
            raise ConfigError("missing required key: input_path", keys=["input_path"])
        kw = dict(data)
        if "lambda" in kw:
            kw["lam"] = kw.pop("lambda")
        for key in ("input_path", "communities_path"):
            if kw.get(key) and base_dir is not None and not os.path.isabs(kw[key]):
                kw[key] = str(Path(base_dir) / kw[key])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        bad = []
        if isinstance(self.lam, str):
            if self.lam not in harness.LAMBDA_RULES:
                bad.append("lambda")
        elif not (isinstance(self.lam, (int, float)) and self.lam > 0):
            bad.append("lambda")
        if not (isinstance(self.gamma, (int, float)) and 0 <= self.gamma <= 1):
            bad.append("gamma")
        if not (isinstance(self.randomization_sd, (int, float)) and self.randomization_sd > 0):
            bad.append("randomization_sd")
        if not (isinstance(self.alpha, (int, float)) and 0 < self.alpha < 1):
            bad.append("alpha")
        if self.seed is not None and not (isinstance(self.seed, int) and self.seed >= 0):
            bad.append("seed")
        if not isinstance(self.bootstrap_draws, int) or self.bootstrap_draws < 1000:
            bad.append("bootstrap_draws")
        if self.information not in INFORMATION:
            bad.append("information")
        if not isinstance(self.targets, list):
            bad.append("targets")
        else:
            for k, t in enumerate(self.targets):
                if not isinstance(t, dict) or set(t) - TARGET_KEYS or "kind" not in t:
                    bad.append(f"targets[{k}]")
                elif t["kind"] not in inference.TARGET_KINDS:
                    bad.append(f"targets[{k}].kind")
        if bad:
            raise ConfigError(f"invalid config values: {', '.join(bad)}", keys=bad)

    def to_dict(self):
        return {
            "input_path": self.input_path, "lambda": self.lam, "gamma": self.gamma,
            "randomization_sd": self.randomization_sd, "seed": self.seed, "alpha": self.alpha,
            "targets": self.targets, "communities_path": self.communities_path,
            "output_path": self.output_path, "penalize_diagonal": self.penalize_diagonal,
            "bootstrap_draws": self.bootstrap_draws, "information": self.information,
        }


def _resolve_seed(seed):
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().entropy % (2 ** 63))


# --- reports ------------------------------------------------------------------

def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _write_json(path, payload):
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path, fieldnames, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for k, v in row.items()})


def analyze(cfg, output_dir):
    """Run the selective pipeline on ``cfg.input_path``; returns the report dict."""
    X, ingest_info = ingest_csv(cfg.input_path)
    n, p = X.shape
    names = ingest_info["columns"]
    lam = cfg.lam if not isinstance(cfg.lam, str) else (
        solver.universal_lambda(p, n) if cfg.lam == "universal" else solver.half_universal_lambda(p, n)
    )
    master = np.random.SeedSequence(cfg.seed)
    rand_seed, boot_seed = master.spawn(2)
    penalty = solver.PenaltySpec(float(lam), float(cfg.gamma), bool(cfg.penalize_diagonal))
    randomization = solver.RandomizationSpec(p, sd=float(cfg.randomization_sd))
    fit = fit_selective(X, penalty, randomization, matcalc.make_rng(rand_seed),
                        information=cfg.information)
    est = fit.estimate
    communities = read_communities(cfg.communities_path, p) if cfg.communities_path else None

    edges = []
    for slot_pos, (pos, i, j) in zip(fit.active.edge_slots(), fit.active.edges()):
        res = inference.edge_interval(est, int(slot_pos), cfg.alpha)
        edges.append({"node_i": int(j), "node_j": int(i), "name_i": names[j], "name_j": names[i],
                      "theta_tilde": res.estimate, "ci_lower": res.ci_lower,
                      "ci_upper": res.ci_upper, "p_value": res.p_value,
                      "significant": bool(res.ci_lower > 0 or res.ci_upper < 0)})

    boot_rng = matcalc.make_rng(boot_seed)
    targets = []
    for t in cfg.targets:
        spec = inference.TargetSpec(t["kind"], tuple(int(v) for v in t.get("nodes", ())),
                                    communities, cfg.alpha)
        t0 = float(t.get("null_value", 0.0))
        res = inference.infer(est, spec, t0, cfg.bootstrap_draws, boot_rng)
        targets.append({"kind": spec.kind, "nodes": list(spec.nodes), "method": res.method,
                        "estimate": res.estimate, "ci_lower": res.ci_lower,
                        "ci_upper": res.ci_upper, "p_value": res.p_value,
                        "null_value": res.null_value, "bootstrap_draws": res.bootstrap_draws})

    report = {
        "config": cfg.to_dict(),
        "data": {"n": n, "p": p, **ingest_info},
        "lambda": float(lam),
        "selected_edges": edges,
        "targets": targets,
        "diagnostics": {"kkt_residual": fit.kkt_residual,
                        "barrier_converged": bool(est.barrier_converged),
                        "h_fallback": bool(fit.h_fallback),
                        "solver_iterations": int(fit.solution.iterations),
                        "active_size": int(fit.active.size_E)},
    }
    output_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(cfg.output_path).name
    _write_json(output_dir / f"{stem}.json", report)
    _write_csv(output_dir / f"{stem}_edges.csv",
               ["node_i", "node_j", "name_i", "name_j", "theta_tilde", "ci_lower", "ci_upper",
                "p_value", "significant"], edges)
    return report


def _replication(args):
    config, seed, rep = args
    return harness.run_replication(config, seed, rep)


def simulate(config, output_dir, threads=1, stream=None):
    seeds = matcalc.spawn_seeds(config.master_seed, config.replications)
    jobs = [(config, s, r) for r, s in enumerate(seeds)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_replication, jobs))
    else:
        parts = [_replication(j) for j in jobs]
    records = [r for part in parts for r in part]
    rows = harness.aggregate(records)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / "summary.csv").write_text(harness.rows_to_csv(rows), encoding="utf-8",
                                            newline="")
    (output_dir / "summary.json").write_text(harness.rows_to_json(rows, config) + "\n",
                                             encoding="utf-8")
    print(harness.format_table(rows), file=stream or sys.stdout)
    return rows


# --- entry point --------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="selgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("analyze", "selective inference on a data set"),
                            ("simulate", "run a simulation scenario")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes (simulate)")
        p.add_argument("--output-dir", default=".", help="directory for reports")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.output_dir)
    try:
        data = load_config(args.config)
        base = Path(args.config).parent
        if args.command == "analyze":
            if args.seed is not None:
                data["seed"] = args.seed
            cfg = AnalysisConfig.from_dict(data, base)
            cfg.seed = _resolve_seed(cfg.seed)
        else:
            if args.seed is not None:
                data["master_seed"] = args.seed
            try:
                cfg = harness.ScenarioConfig.from_dict(data)
            except TypeError as exc:
                raise ConfigError(f"invalid scenario: {exc}") from exc
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1", keys=["threads"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "analyze":
            report = analyze(cfg, out)
            print(f"{len(report['selected_edges'])} edges selected; report written to {out}")
        else:
            simulate(cfg, out, args.threads)
    except SelgraphError as exc:
        print(f"error in {exc.stage}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
