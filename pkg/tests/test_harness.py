import json
import math

import numpy as np
import pytest

from radioloc.errors import ConfigError, EmptyResolvedSet
from radioloc.harness import (ExperimentConfig, compute_rmse, error_cdf, ranges_digest,
                              run_experiment, trial_seed)

SMALL = {"generate": {"n_anchors": 8, "n_agents": 12, "side": 1.0, "comm_range": 0.6, "seed": 3}}


def small_config(**kw):
    d = {"scenario": SMALL, "sigmas": [0.0, 0.05],
         "solvers": ["ls", "coop_ls", "mds", {"name": "pocs", "graph": "range"},
                     {"name": "admm", "graph": "range"}],
         "n_trials": 3, "seed": 7}
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def test_compute_rmse_examples():
    truth = {0: (0.0, 0.0), 1: (1.0, 1.0)}
    assert compute_rmse({0: (3.0, 4.0), 1: (1.0, 1.0)}, truth) == pytest.approx(math.sqrt(12.5))
    assert compute_rmse({0: (3.0, 4.0), 1: (np.nan, np.nan)}, truth) == pytest.approx(5.0)
    with pytest.raises(EmptyResolvedSet):
        compute_rmse({}, truth)
    with pytest.raises(EmptyResolvedSet):
        compute_rmse({0: (np.nan, 0.0)}, truth)


def test_error_cdf_examples():
    e = np.arange(1.0, 101.0)
    assert error_cdf(e) == [(50.0, 50.5), (90.0, pytest.approx(90.1))]
    assert error_cdf([2.0, 7.0], (0, 100)) == [(0.0, 2.0), (100.0, 7.0)]
    with pytest.raises(ValueError):
        error_cdf([])


def test_trial_seed_stable():
    assert trial_seed(1, 0, 0) == trial_seed(1, 0, 0)
    assert len({trial_seed(1, s, t) for s in range(3) for t in range(50)}) == 150


def test_run_small_experiment():
    table = run_experiment(small_config())
    assert len(table.rows) == 5 * 2 * 3
    table.check_consistency()
    for name in ("coop_ls", "mds", "pocs", "admm"):
        assert table.lookup(name, 0.0)["mean_rmse"] < 1e-6
    noisy = table.lookup("coop_ls", 0.05)
    assert noisy["rmse_p50"] <= noisy["rmse_p90"]
    # solvers on the same graph at a given (sigma, trial) see the same ranges
    graph = {"ls": "full", "coop_ls": "full", "mds": "full", "pocs": "range", "admm": "range"}
    by_key = {}
    for r in table.rows:
        by_key.setdefault((graph[r["solver"]], r["sigma"], r["trial"]), set()).add(r["ranges_sha256"])
    assert len(by_key) == 2 * 2 * 3
    assert all(len(v) == 1 for v in by_key.values())
    assert all(r["error"] == "" for r in table.rows)


def test_determinism_and_workers(tmp_path):
    a = run_experiment(small_config())
    b = run_experiment(small_config())
    c = run_experiment(small_config(workers=2))
    assert a.rows_csv() == b.rows_csv() == c.rows_csv()
    assert a.aggregates_json() == c.aggregates_json()
    a.write(tmp_path)
    assert (tmp_path / "metrics.csv").read_text() == a.rows_csv()
    assert json.loads((tmp_path / "aggregates.json").read_text()) == a.aggregates
    assert (tmp_path / "timings.csv").exists()


def test_seed_changes_ranges():
    a = run_experiment(small_config(sigmas=[0.05], solvers=["ls"], n_trials=1))
    b = run_experiment(small_config(sigmas=[0.05], solvers=["ls"], n_trials=1, seed=8))
    assert a.rows[0]["ranges_sha256"] != b.rows[0]["ranges_sha256"]


def test_config_errors_name_paths():
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_dict({"sigmas": [-1, "x"], "solvers": [{"name": "gauss"}, "ls", "ls"],
                                    "n_trials": 0, "seed": -2, "bogus": 1})
    probs = ei.value.problems
    for key in ("scenario", "sigmas[0]", "sigmas[1]", "solvers[0].name", "solvers[2].label",
                "n_trials", "seed", "bogus"):
        assert key in probs, key
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_dict({"scenario": SMALL, "sigmas": [0.1],
                                    "solvers": [{"name": "admm", "params": {"rho": 2}}]})
    assert "solvers[0].params.rho" in ei.value.problems
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict([1, 2])


def test_load_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    q = tmp_path / "c.json"
    q.write_text(json.dumps({"scenario": {"file": "nope.json"}, "sigmas": [0.1], "solvers": ["ls"]}))
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.load(q)
    assert "scenario.file" in ei.value.problems


def test_ranges_digest_sensitive():
    from radioloc.scenario import generate_benchmark_scenario, synthesize_ranges
    sc = generate_benchmark_scenario(4, 5, 1.0, 0.6, seed=0)
    r1 = synthesize_ranges(sc, 0.1, seed=1)
    r2 = synthesize_ranges(sc, 0.1, seed=2)
    assert ranges_digest(r1) == ranges_digest(synthesize_ranges(sc, 0.1, seed=1))
    assert ranges_digest(r1) != ranges_digest(r2)
