import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from hiortho.mc import (
    McReport,
    McStudyConfig,
    TopologyConfig,
    effects_for_simulation,
    estimator_label,
    generate_topology,
    neyman_scott_split_study,
    run_study,
    simulate_corpus,
)
from hiortho.models.ces import CesTheta, ces_log_aggregate

SMALL = TopologyConfig(n_authors=120, n_papers=800, duo_share=0.15, seed=11)


@pytest.mark.parametrize(
    "kwargs",
    [dict(n_authors=2), dict(n_papers=100), dict(sorting=1.0), dict(repeat_prob=1.0), dict(effect_sd=-1.0)],
)
def test_topology_validation(kwargs):
    with pytest.raises(ValueError):
        generate_topology(replace(SMALL, **kwargs))


def test_topology_shape(small_topology):
    top, eff = small_topology
    assert len(top) == 800
    assert len(top.duo_papers) == 120
    assert set(eff) == set(top.authors) and len(eff) == 120
    assert all(len(top.solo_papers[a]) >= 2 for a in top.authors)
    assert top.eligible_authors == top.authors
    assert generate_topology(SMALL) == (top, eff)
    assert generate_topology(replace(SMALL, seed=12))[0] != top


def test_sorting_induces_effect_correlation():
    def duo_corr(sorting):
        top, eff = generate_topology(replace(SMALL, n_authors=400, n_papers=4000, sorting=sorting, repeat_prob=0.0))
        pairs = np.array([[eff[a] for a in top.papers[j].authors] for j in top.duo_papers])
        return np.corrcoef(pairs.T)[0, 1]

    assert duo_corr(0.6) > duo_corr(0.0) + 0.3


def test_noise_free_outputs_equal_means(small_topology):
    top, eff = small_topology
    theta = CesTheta(1.7, 0.5, 1e-300, 1e-300)
    sim = simulate_corpus(top, theta, eff, seed=0)
    lo = sim.log_output
    for j, p in enumerate(sim.papers):
        if p.size == 1:
            assert lo[j] == pytest.approx(eff[p.authors[0]], abs=1e-12)
        else:
            a = np.array([[eff[x] for x in p.authors]])
            assert lo[j] == pytest.approx(np.log(1.7) + ces_log_aggregate(a, 0.5)[0], abs=1e-12)


def test_solo_log_variance_matches_truth():
    top, eff = generate_topology(replace(SMALL, n_authors=300, n_papers=3000))
    theta = CesTheta(1.0, 1.0, 0.64, 1.0)
    sim = simulate_corpus(top, theta, eff, seed=4)
    lo = sim.log_output
    resid = np.array([lo[j] - eff[p.authors[0]] for j, p in enumerate(sim.papers) if p.size == 1])
    se = 0.64 * np.sqrt(2.0 / resid.size)
    assert abs(np.mean(resid ** 2) - 0.64) < 3 * se


def test_simulation_seeding(small_topology):
    top, eff = small_topology
    th = CesTheta(1.0, 1.0, 1.0, 1.0)
    a = simulate_corpus(top, th, eff, seed=1, rep=0)
    assert simulate_corpus(top, th, eff, seed=1, rep=0) == a
    assert simulate_corpus(top, th, eff, seed=2, rep=0) != a
    assert simulate_corpus(top, th, eff, seed=1, rep=1) != a
    with pytest.raises(ValueError, match="no effect"):
        simulate_corpus(top, th, {}, seed=1)


def test_effects_for_simulation(tiny_corpus):
    eff = effects_for_simulation(tiny_corpus)
    assert eff["ann"] == pytest.approx(1.0)
    assert eff["bob"] == pytest.approx(1.0)


def test_study_config_validation():
    for bad in [dict(n_reps=0), dict(q_list=(7,)), dict(q_list=()), dict(estimator="ols")]:
        with pytest.raises(ValueError):
            McStudyConfig(topology=SMALL, **bad).validate()


def test_single_replication_degenerate_quantiles(tmp_path):
    report = run_study(McStudyConfig(topology=SMALL, n_reps=1, q_list=(0, 2)))
    assert [estimator_label(q) for q in (0, 2)] == ["plug-in", "q=2"]
    for row in report.rows:
        assert row["n_ok"] + row["n_failed"] == 1
        if row["n_ok"]:
            assert row["Median"] == row["Mean"] == row["q2.5"] == row["q97.5"]
            assert row["SD"] == 0.0
    paths = report.write(tmp_path)
    with open(paths["aggregate"]) as fh:
        header = next(csv.reader(fh))
    assert header[:6] == ["parameter", "estimator", "Median", "Mean", "q2.5", "q97.5"]
    summary = json.loads(paths["summary"].read_text())
    assert summary["config"]["n_reps"] == 1


def test_study_counts_and_order():
    report = run_study(McStudyConfig(topology=SMALL, n_reps=4, q_list=(0,), seed=3))
    assert [r["rep"] for r in report.replications] == [0, 1, 2, 3]
    row = report.get("gamma", "plug-in")
    assert row["n_ok"] + row["n_failed"] == 4
    assert row["n_ok"] >= 1
    assert row["q2.5"] <= row["Median"] <= row["q97.5"]
    assert report.values("gamma", "plug-in").size == row["n_ok"]
    with pytest.raises(KeyError):
        report.get("gamma", "q=5")
    assert isinstance(report, McReport)


def test_study_worker_pool_is_deterministic():
    cfg = McStudyConfig(topology=SMALL, n_reps=3, q_list=(0,), seed=9)
    a = run_study(cfg)
    b = run_study(replace(cfg, workers=2))
    assert repr(a.rows) == repr(b.rows)


def test_quasi_diff_study_reports_boundaries():
    cfg = McStudyConfig(topology=SMALL, theta0=CesTheta(1, 1, 0.04, 0.04), n_reps=5, estimator="quasi-diff")
    report = run_study(cfg)
    row = report.get("gamma", "quasi-diff")
    assert row["n_ok"] == 5
    assert 0 <= row["n_boundary"] <= 5


def test_neyman_scott_split_bias():
    res = neyman_scott_split_study(N=200, T_prelim=3, T_est=2, sigma2=1.5, n_reps=400, seed=1)
    assert res.predicted_bias == 0.5
    assert abs(res.mean_bias - res.predicted_bias) < 3 * res.mc_se
    with pytest.raises(ValueError):
        neyman_scott_split_study(10, 0, 1, 1.0, 1)
