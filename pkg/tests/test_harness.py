from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest

from ncdiag.harness import (
    CSV_FIXED,
    DiagnosticReport,
    ExperimentConfig,
    autocorrelation,
    default_prefixes,
    ess,
    ess_per_coordinate,
    min_ess,
    preset,
    run_experiment,
    simulate_data,
)
from ncdiag.io import read_chain, read_data
from ncdiag.model import IsingModel
from ncdiag.oracle import enumerate_ising
from stats_helpers import chi2_vs_pmf


def ar1(n, rho, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - rho**2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x


# ---------------------------------------------------------------- ESS


def test_autocorrelation_lag_zero_is_one(rng):
    rho = autocorrelation(rng.normal(size=100))
    assert rho[0] == pytest.approx(1.0)
    assert np.all(np.abs(rho) <= 1 + 1e-12)


@pytest.mark.parametrize("method", ["threshold", "geyer"])
def test_ess_iid(method):
    for seed in range(10):
        x = np.random.default_rng(seed).standard_normal(10_000)
        assert abs(ess(x, method=method) / 10_000 - 1) < 0.15


@pytest.mark.parametrize("method", ["threshold", "geyer"])
def test_ess_ar1(method):
    x = ar1(100_000, 0.5, seed=1)
    assert abs(ess(x, method=method) / 100_000 / (1 / 3) - 1) < 0.15


def test_ess_constant_chain_raises():
    with pytest.raises(ValueError, match="variance"):
        ess(np.full(100, 2.0))


def test_ess_short_chain_raises():
    with pytest.raises(ValueError):
        ess(np.arange(5.0))


def test_ess_unknown_method(rng):
    with pytest.raises(ValueError):
        ess(rng.normal(size=50), method="batch")


def test_min_ess_over_coordinates():
    x = np.column_stack([np.random.default_rng(0).standard_normal(20_000), ar1(20_000, 0.9, 2)])
    per = ess_per_coordinate(x)
    assert min_ess(x) == per.min() == per[1]
    assert ess(x, coordinate=1) == per[1]


# ---------------------------------------------------------------- simulation


def test_simulate_gaussian_mean():
    data, prov = simulate_data({"model": "gaussian", "n": 500, "mu": 5.0, "sigma": 2.0}, seed=20)
    assert data.shape == (500,)
    assert abs(data.mean() - 5.0) < 3 * 2 / np.sqrt(500)
    assert prov["seed"] == 20


def test_simulate_ising_matches_pmf():
    table = enumerate_ising((3, 3), 0.2)
    model = IsingModel()
    recipe = {"model": "ising", "r": 3, "s": 3, "theta": 0.2}
    draws = np.array([model.statistic(simulate_data(recipe, seed=s)[0]).item() for s in range(20_000)])
    assert chi2_vs_pmf(draws, np.asarray(table.values), np.asarray(table.probs)) > 0.001


def test_simulate_ergm_shape():
    g, _ = simulate_data({"model": "ergm", "n": 5, "theta": [-0.5, 0.3], "sweeps": 20}, seed=1)
    assert g.shape == (5, 5)
    assert np.array_equal(g, g.T) and not g.diagonal().any()


def test_simulate_same_seed_same_bytes(tmp_path):
    recipe = {"model": "ising", "r": 3, "s": 3, "theta": 0.2}
    simulate_data(recipe, 4, tmp_path / "a.json")
    simulate_data(recipe, 4, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    kind, data, prov = read_data(tmp_path / "a.json")
    assert kind == "ising" and data.shape == (3, 3) and prov["recipe"] == recipe


@pytest.mark.parametrize(
    "recipe",
    [{"n": 5}, {"model": "poisson"}, {"model": "gaussian", "n": 0, "mu": 0, "sigma": 1}, {"model": "ising", "r": 0, "s": 3, "theta": 0.1}],
)
def test_simulate_rejects_bad_recipe(recipe):
    with pytest.raises(ValueError):
        simulate_data(recipe, 0)


# ---------------------------------------------------------------- configuration


def test_default_prefixes():
    assert default_prefixes(100) == [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
    assert default_prefixes(3) == [1, 2, 3]


def small_ising(tmp_path, **kw):
    base = dict(
        model_options={"lower": -2.0, "upper": 3.0},
        sampler={"kind": "dmh", "iterations": 200, "proposal_scale": [1.2], "seed": 0, "init": [0.5]},
        sweep={"parameter": "inner_updates", "values": [1, 5]},
        N=200,
        prefixes=[100, 200],
        output_dir=str(tmp_path / "out"),
    )
    base.update(kw)
    return preset("ising-dmh-sweep", **base)


@pytest.mark.parametrize(
    "change",
    [
        {"sweep": {"parameter": "inner_updates", "values": []}},
        {"sweep": {"parameter": "inner_updates", "values": [1, 1]}},
        {"sweep": {"parameter": "colour", "values": [1]}},
        {"seeds": [0, "1"]},
        {"seeds": [2, 2]},
        {"diagnostics": ("ess", "rhat")},
        {"diagnostics": ()},
        {"N": 0},
        {"ess_method": "spectral"},
        {"prefixes": [0, 10]},
        {"kernel": {"beta": 0.5}},
        {"data_file": "x.json"},
    ],
)
def test_config_validation(tmp_path, change):
    with pytest.raises(ValueError):
        small_ising(tmp_path, **change)


def test_config_needs_a_data_source():
    with pytest.raises(ValueError):
        ExperimentConfig(model="ising", sampler={"kind": "dmh", "iterations": 10})


def test_settings_expand_values_by_seeds(tmp_path):
    cfg = small_ising(tmp_path, seeds=[3, 4])
    labels = [label for label, _ in cfg.settings()]
    assert labels == ["inner_updates=1/seed=3", "inner_updates=1/seed=4", "inner_updates=5/seed=3", "inner_updates=5/seed=4"]
    assert cfg.settings()[2][1].inner_updates == 5


def test_config_hash_ignores_workers_and_paths(tmp_path):
    a = small_ising(tmp_path)
    b = small_ising(tmp_path / "elsewhere", workers=3, cache_dir="c")
    assert a.hash() == b.hash()
    assert a.hash() != small_ising(tmp_path, N=300).hash()


def test_config_round_trip(tmp_path):
    cfg = small_ising(tmp_path)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert ExperimentConfig.from_dict({"preset": "toy-gaussian"}).N == 100_000


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown preset"):
        preset("potts")


def test_toy_gaussian_preset_shape():
    cfg = preset("toy-gaussian")
    assert cfg.prefixes == [5000, 10_000, 15_000, 20_000]
    assert set(cfg.diagnostics) == {"cd", "acd", "ksd", "aiks"}


# ---------------------------------------------------------------- runs


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_report_is_complete(tmp_path):
    cfg = small_ising(tmp_path, seeds=[0, 1])
    report = run_experiment(cfg)
    rows = read_rows(tmp_path / "out" / "diagnostics.csv")
    assert len(rows) == 4 * 5 * 2 == len(report.rows)
    cells = {(r["setting"], r["diagnostic"], int(r["prefix"])) for r in rows}
    assert len(cells) == len(rows)
    assert all(r["status"] == "ok" for r in rows)
    assert list(rows[0])[: len(CSV_FIXED)] == CSV_FIXED
    acd = next(r for r in rows if r["diagnostic"] == "acd")
    assert acd["source"] == "approximated" and acd["w"] == "0.5" and acd["N"] == "200"
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.hash()
    assert manifest["failed_cells"] == 0
    chain = read_chain(tmp_path / "out" / "chains" / "inner_updates-1_seed-0.csv")
    assert len(chain) == 200


def test_warm_cache_matches_cold_run(tmp_path):
    cache = tmp_path / "cache"
    cold = small_ising(tmp_path / "cold", cache_dir=str(cache))
    run_experiment(cold)
    warm = small_ising(tmp_path / "warm", cache_dir=str(cache))
    report = run_experiment(warm)
    assert report.cache_misses == 0 and report.cache_hits > 0
    a = (tmp_path / "cold" / "out" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "warm" / "out" / "diagnostics.csv").read_bytes()
    assert a == b


def test_worker_count_does_not_change_csv(tmp_path):
    run_experiment(small_ising(tmp_path / "one", workers=1))
    run_experiment(small_ising(tmp_path / "two", workers=2))
    a = (tmp_path / "one" / "out" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "two" / "out" / "diagnostics.csv").read_bytes()
    assert a == b


def test_missing_exact_posterior_marks_cells_failed(tmp_path):
    # n = 7 is beyond enumeration, so CD and KSD cannot be computed
    cfg = preset(
        "ergm-dmh",
        recipe={"model": "ergm", "n": 7, "theta": [-0.5, 0.3], "sweeps": 20},
        sampler={"kind": "dmh", "iterations": 60, "proposal_scale": [0.4, 0.4], "seed": 0, "init": [-0.5, 0.3]},
        sweep=None,
        diagnostics=("ess", "cd", "ksd"),
        prefixes=[30, 60],
        output_dir=str(tmp_path / "out"),
    )
    report = run_experiment(cfg)
    failed = {(r["diagnostic"], r["prefix"]) for r in report.failed}
    assert failed == {("cd", 30), ("cd", 60), ("ksd", 30), ("ksd", 60)}
    assert all(r["reason"] for r in report.failed)
    assert len(report.rows) == 6


def test_report_value_lookup():
    rows = [
        {"setting": "s", "diagnostic": "cd", "prefix": 10, "value": 0.1, "comps": None, "N": None, "w": 0.5, "status": "ok", "reason": ""},
        {"setting": "s", "diagnostic": "ksd", "prefix": 10, "value": None, "comps": None, "N": None, "w": None, "status": "failed", "reason": "boom"},
    ]
    rep = DiagnosticReport(rows, 1)
    assert rep.value("s", "cd", 10) == 0.1
    with pytest.raises(ValueError, match="boom"):
        rep.value("s", "ksd", 10)
    with pytest.raises(KeyError):
        rep.value("s", "acd", 10)
    parsed = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert parsed[1]["status"] == "failed" and parsed[1]["value"] == ""
