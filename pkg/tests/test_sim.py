import math
import time

import numpy as np
import pytest

from selgraph import matcalc
from selgraph.errors import ConfigError
from selgraph.refit import ActiveSet
from selgraph.sim import generate_modular, generate_scale_free, harness
from selgraph.sim.harness import ReplicationRecord, ScenarioConfig


@pytest.mark.parametrize("kind", ["scale_free", "modular"])
def test_generators_are_positive_definite(kind):
    for seed in range(100):
        rng = matcalc.make_rng(seed)
        if kind == "scale_free":
            g = generate_scale_free(50, rng=rng)
        else:
            g = generate_modular(40, 4, rng=rng)
        assert matcalc.min_eigenvalue(g.theta) > 0
        np.testing.assert_allclose(np.diag(g.sigma), 1.0, atol=1e-12)
        np.testing.assert_allclose(g.theta @ g.sigma, np.eye(g.p), atol=1e-9)


def test_scale_free_density_and_weights():
    for seed in range(20):
        g = generate_scale_free(50, rng=matcalc.make_rng(seed))
        assert 0.07 <= g.density <= 0.13


def test_scale_free_has_hubs():
    for seed in range(10):
        g = generate_scale_free(100, rng=matcalc.make_rng(seed))
        deg = g.adjacency.sum(0)
        assert deg.max() >= 3 * np.median(deg)


def test_modular_densities():
    within, between = [], []
    for seed in range(20):
        g = generate_modular(100, 4, rng=matcalc.make_rng(seed))
        same = g.communities[:, None] == g.communities[None, :]
        off = ~np.eye(100, dtype=bool)
        w = g.adjacency[same & off].mean()
        b = g.adjacency[~same].mean()
        assert w > b
        within.append(w)
        between.append(b)
    assert np.mean(within) == pytest.approx(0.25, abs=0.02)
    assert np.mean(between) == pytest.approx(0.01, abs=0.004)
    g = generate_modular(rng=1)
    assert g.p == 100 and np.array_equal(np.bincount(g.communities), [25] * 4)


def test_f1_and_target_error_by_hand():
    theta = np.eye(4)
    theta[1, 0] = theta[0, 1] = 0.3
    theta[2, 1] = theta[1, 2] = 0.3
    active = ActiveSet.from_edges(4, [(1, 0), (3, 0)])
    # TP = 1, FP = 1, FN = 1
    assert harness.f1_score(active, theta) == pytest.approx(0.5)
    star = np.zeros(active.size_E)
    star[active.edge_slots()] = [0.3, 1e-3]
    assert harness.target_error(active, theta, star) == pytest.approx(0.5)
    star[active.edge_slots()] = [0.3, 1e-10]
    assert harness.target_error(active, theta, star) == 0.0


def test_config_validation_lists_offending_keys():
    with pytest.raises(ConfigError) as info:
        ScenarioConfig(methods=("SIR", "POLY"), p=2)
    assert set(info.value.keys) == {"methods", "p"}
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_dict({"p": 10, "colour": "red"})
    assert info.value.keys == ["colour"]
    with pytest.raises(ConfigError):
        ScenarioConfig(randomization_sd=0.0)
    assert ScenarioConfig(randomization_sd=0.0, methods=("DS",)).methods == ("DS",)


def test_config_round_trip():
    cfg = ScenarioConfig(p=10, n=200, replications=2, lambda_rule=0.1)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.lam(200) == 0.1


def _small(**kw):
    base = dict(p=10, n=300, replications=2, bootstrap_draws=1000, master_seed=5)
    base.update(kw)
    return ScenarioConfig(**base)


def test_scenario_is_deterministic():
    cfg = _small()
    a = harness.rows_to_csv(harness.aggregate(harness.run_scenario(cfg)))
    b = harness.rows_to_csv(harness.aggregate(harness.run_scenario(cfg)))
    assert a == b
    c = harness.rows_to_csv(harness.aggregate(harness.run_scenario(_small(master_seed=6))))
    assert a != c


def test_ds_and_naive_share_the_fixed_model_path(monkeypatch):
    calls = []
    real = harness.select

    def spy(X, penalty, randomization=None, rng=None, **kw):
        calls.append((X.shape[0], randomization is None, X))
        return real(X, penalty, randomization, rng, **kw)

    monkeypatch.setattr(harness, "select", spy)
    cfg = _small(methods=("DS", "Naive"), replications=1)
    recs = harness.run_replication(cfg, np.random.SeedSequence(1))
    assert [r.method for r in recs] == ["DS", "Naive"]
    assert [(n, plain) for n, plain, _ in calls] == [(150, True), (300, True)]
    np.testing.assert_array_equal(calls[0][2], calls[1][2][:150])


def test_data_splitting_fails_when_half_sample_is_too_small():
    cfg = _small(p=30, n=40, methods=("SIR", "DS"), replications=1)
    recs = harness.run_replication(cfg, np.random.SeedSequence(3))
    sir, ds = recs
    assert not sir.refit_failed
    assert ds.refit_failed and "rank" in ds.failure


def test_aggregate_single_and_synthetic_records():
    rec = ReplicationRecord("SIR", 0, f1=0.6, target_error=0.1, hits={"edge": [True, False, True]},
                            lengths={"edge": [0.1, 0.2, 0.3]})
    rows = harness.aggregate([rec])
    assert harness.lookup(rows, "SIR", "F1") == 0.6
    assert harness.lookup(rows, "SIR", "coverage", "edge") == pytest.approx(2 / 3)
    assert harness.lookup(rows, "SIR", "length", "edge") == pytest.approx(0.2)
    other = ReplicationRecord("SIR", 1, f1=0.2, target_error=0.3, hits={"edge": [True]},
                              lengths={"edge": [0.6]})
    failed = ReplicationRecord("SIR", 2, refit_failed=True)
    rows = harness.aggregate([rec, other, failed])
    assert harness.lookup(rows, "SIR", "F1") == pytest.approx(0.4)
    assert harness.lookup(rows, "SIR", "target_error") == pytest.approx(0.2)
    assert harness.lookup(rows, "SIR", "coverage", "edge") == pytest.approx(3 / 4)
    assert harness.lookup(rows, "SIR", "length", "edge") == pytest.approx(1.2 / 4)
    assert harness.lookup(rows, "SIR", "failed") == 1.0
    assert math.isnan(harness.lookup(rows, "DS", "F1"))


def test_summary_serialisation():
    rows = harness.aggregate(harness.run_scenario(_small(replications=1)))
    text = harness.rows_to_csv(rows)
    assert text.splitlines()[0] == ",".join(harness.SUMMARY_FIELDS)
    assert '"rows"' in harness.rows_to_json(rows, _small())
    assert "coverage edge" in harness.format_table(rows)


@pytest.mark.slow
def test_single_replication_runtime():
    cfg = ScenarioConfig(replications=1)
    start = time.perf_counter()
    recs = harness.run_replication(cfg, np.random.SeedSequence(0))
    assert time.perf_counter() - start < 60
    assert {r.method for r in recs} == {"SIR", "DS", "Naive"}
