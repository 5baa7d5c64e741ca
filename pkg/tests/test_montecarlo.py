import csv
import json

import numpy as np
import pytest

from robustexec.costs import reduced_functional
from robustexec.ensemble import MCEstimate, map_paths
from robustexec.models import (Bachelier, CompensatedJumpMartingale, ConstantPrice, GBMMartingale,
                               OrnsteinUhlenbeck, TimeGrid)
from robustexec.montecarlo import compare, estimate, robustness_sweep
from robustexec.strategies import ImpactParams, make_rule, vwap

P = ImpactParams(eta=1.0, gamma=1.0, risk_aversion=1.0)
G = TimeGrid.uniform(1.0, 100)
GBM = GBMMartingale(1.0, 0.2)


def test_constant_price_estimate_is_deterministic():
    rule = make_rule("gs_martingale", 1.0, P)
    est = estimate(rule, ConstantPrice(1.0), P, G, 50, seed=0)
    S = np.ones((1, len(G)))
    assert est.mean == pytest.approx(reduced_functional(rule(G, S), S, P)[0], rel=1e-14)
    assert est.stderr <= 1e-15


def test_vwap_expected_realized_cost():
    est = estimate(vwap(1.0, G), GBM, P, G, 20_000, seed=3, functional="cost")
    assert abs(est.z_score(-1.0 + 1.0 + 0.5)) < 3


def test_stderr_scales_with_sample_size():
    rule = make_rule("vwap", 1.0, P)
    small = estimate(rule, GBM, P, G, 10_000, seed=1)
    big = estimate(rule, GBM, P, G, 20_000, seed=1)
    assert big.stderr / small.stderr == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_estimate_validation():
    with pytest.raises(ValueError):
        estimate(vwap(1.0, G), GBM, P, G, 1, seed=0)
    with pytest.raises(ValueError):
        estimate(vwap(1.0, G), GBM, P, G, 10, seed=0, functional="variance")


def test_risk_functional_matches_identity():
    rule = make_rule("gs_martingale", 1.0, P)
    risk = estimate(rule, GBM, P, G, 2000, seed=2, functional="risk")
    red = estimate(rule, GBM, P, G, 2000, seed=2)
    assert risk.mean == pytest.approx(0.5 - 1.0 + red.mean, rel=1e-12)


def test_results_independent_of_threads_and_chunks():
    rule = make_rule("gs_martingale", 1.0, P)
    a = estimate(rule, GBM, P, G, 9000, seed=4, threads=1)
    b = estimate(rule, GBM, P, G, 9000, seed=4, threads=3)
    assert a == b
    fn = lambda S: reduced_functional(rule(G, S), S, P)
    x = map_paths(fn, GBM, G, 1000, 4, threads=1, chunk_size=1000)
    y = map_paths(fn, GBM, G, 1000, 4, threads=4, chunk_size=37)
    np.testing.assert_array_equal(x, y)


def test_compare_optimal_beats_vwap_with_paired_errors():
    rules = {"optimal": make_rule("gs_martingale", 1.0, P), "vwap": make_rule("vwap", 1.0, P)}
    res = compare(rules, GBM, P, G, 5000, seed=0)
    diff = res.difference("vwap", "optimal")
    assert diff.mean > 3 * diff.stderr
    assert diff.stderr < res.unpaired_stderr[("vwap", "optimal")]
    assert res.ranking == ["optimal", "vwap"]


def test_compare_identical_rules_zero_difference():
    rule = make_rule("gs_martingale", 1.0, P)
    res = compare({"a": rule, "b": rule}, GBM, P, G, 500, seed=0)
    d = res.difference("a", "b")
    assert d.mean == 0.0 and d.stderr == 0.0


def test_compare_against_mean_variance_on_frozen_path():
    alpha, sigma = 2.0, 0.2
    p = ImpactParams(eta=1.0, gamma=0.5, risk_aversion=alpha * sigma**2 / (2 * 0.5))
    rules = {"optimal": make_rule("gs_martingale", 1.0, p),
             "mv": make_rule("mean_variance", 1.0, p, alpha=alpha, sigma=sigma)}
    res = compare(rules, ConstantPrice(1.0), p, G, 10, seed=0)
    S = np.ones((1, len(G)))
    gap = reduced_functional(rules["mv"](G, S), S, p) - reduced_functional(rules["optimal"](G, S), S, p)
    assert res.difference("mv", "optimal").mean == pytest.approx(gap[0], rel=1e-12)
    assert gap[0] > 0


def test_compare_needs_two_rules():
    with pytest.raises(ValueError):
        compare({"a": make_rule("vwap", 1.0, P)}, GBM, P, G, 10, seed=0)


def test_compare_csv(tmp_path):
    rules = {"optimal": make_rule("gs_martingale", 1.0, P), "vwap": make_rule("vwap", 1.0, P)}
    res = compare(rules, GBM, P, G, 200, seed=0)
    res.to_csv(tmp_path / "compare.csv")
    rows = list(csv.DictReader(open(tmp_path / "compare.csv")))
    assert [r["strategy"] for r in rows] == res.ranking
    assert float(rows[1]["diff_vs_best"]) == res.difference(rows[1]["strategy"], rows[0]["strategy"]).mean


def test_sweep_rejects_non_martingale():
    with pytest.raises(ValueError, match="martingale"):
        robustness_sweep(make_rule("vwap", 1.0, P), [GBM, Bachelier(1.0, 0.2, 0.3)], P, G, 10, 0)
    with pytest.raises(ValueError):
        robustness_sweep(make_rule("vwap", 1.0, P), [OrnsteinUhlenbeck(1.0, 1.0, 1.0, 0.2)], P, G, 10, 0)


def test_single_model_sweep_is_estimate():
    rule = make_rule("gs_martingale", 1.0, P)
    sweep = robustness_sweep(rule, {"gbm": GBM}, P, G, 300, seed=7)
    assert sweep.entries[0].estimate == estimate(rule, GBM, P, G, 300, seed=7)
    assert sweep.entries[0].excess is None
    assert sweep.worst_case.name == "gbm"


def test_sweep_small_scale(tmp_path):
    models = {"constant": ConstantPrice(1.0), "bachelier": Bachelier(1.0, 0.2), "gbm": GBM,
              "jump": CompensatedJumpMartingale(1.0, 5.0, 0.1)}
    opt = robustness_sweep(make_rule("gs_martingale", 1.0, P), models, P, G, 3000, 0, X=1.0)
    bad = robustness_sweep(make_rule("vwap", 1.0, P), models, P, G, 3000, 0, X=1.0)
    assert all(e.excess_within(4) for e in opt.entries)
    assert all(e.excess_positive(3) for e in bad.entries)
    assert bad.worst_case.estimate.mean == max(e.estimate.mean for e in bad.entries)
    bad.to_csv(tmp_path / "sweep.csv")
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [r["model"] for r in rows] == list(models)
    doc = json.loads(json.dumps(bad.to_dict()))
    assert doc["worst_case"]["model"] == bad.worst_case.name


def test_mc_estimate_invariants():
    est = MCEstimate.from_samples([1.0, 2.0, 3.0, 4.0], seed=1)
    assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert MCEstimate(1.0, 0.0, 2).z_score(1.0) == 0.0
    assert MCEstimate(1.0, 0.0, 2).z_score(0.0) == np.inf
    with pytest.raises(ValueError):
        MCEstimate.from_samples([1.0])
