import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustexec.costs import value_martingale
from robustexec.models import BinomialMartingale, ConstantPrice, GBMMartingale, TimeGrid
from robustexec.oracle import (
    _energy,
    enumerate_policy_cost,
    euler_lagrange_deterministic,
    euler_lagrange_residual,
    perturbation_check,
    random_directions,
    submartingale_check,
    tree_dp,
    tree_oracle_error,
)
from robustexec.strategies import ImpactParams, make_rule, vwap

P11 = ImpactParams.reduced(1.0, 1.0)


def small_tree(n=8, sigma=0.3):
    return BinomialMartingale.fit_gbm(1.0, sigma, 1.0, n)


# --- tree DP ----------------------------------------------------------------

def test_tree_without_risk_has_no_price_coupling():
    n = 20
    sol = tree_dp(small_tree(n), n, 1.0, ImpactParams.reduced(0.0, 1.2))
    for k in range(n):
        assert np.all(sol.value.b[k] == 0.0) and np.all(sol.value.c[k] == 0.0)
        assert np.all(sol.beta[k] == 0.0)
    # discrete Riccati recursion for a_k
    dt = 1.0 / n
    D, q = 1 / dt, 1.44 * dt
    a = D + q
    assert sol.value.a[n - 1] == pytest.approx(a)
    for k in range(n - 2, -1, -1):
        a = D * a / (D + a) + q
        assert sol.value.a[k] == pytest.approx(a, rel=1e-14)
    # and it tends to the continuous coefficient nu coth(nu T)
    fine = tree_dp(small_tree(2000, 0.1), 2000, 1.0, ImpactParams.reduced(0.0, 1.2))
    assert fine.value.a[0] == pytest.approx(1.2 / math.tanh(1.2), rel=1e-3)


def test_zero_position_zero_value():
    sol = tree_dp(small_tree(), 8, 0.0, ImpactParams.reduced(0.0, 1.0))
    assert sol.value(0, 0, 0.0) == 0.0
    assert enumerate_policy_cost(sol, 0.0) == 0.0


@pytest.mark.parametrize("X", [0.0, 1.0, 2.0])
def test_value_equals_brute_force_enumeration(X):
    n = 8
    sol = tree_dp(small_tree(n), n, X, P11)
    assert enumerate_policy_cost(sol, X) == pytest.approx(sol.value(0, 0, X), rel=1e-12, abs=1e-14)


def test_value_is_quadratic_in_position():
    n = 8
    sol = tree_dp(small_tree(n), n, 1.0, P11)
    V = [enumerate_policy_cost(sol, X) for X in (0.0, 1.0, 2.0)]
    c = V[0]
    a = (V[2] - 2 * V[1] + V[0]) / 2
    b = V[1] - a - c
    assert a == pytest.approx(sol.value.a[0], rel=1e-10)
    assert b == pytest.approx(sol.value.b[0][0], rel=1e-10)
    assert c == pytest.approx(sol.value.c[0][0], rel=1e-10, abs=1e-14)


def test_feedback_beats_perturbed_feedback():
    n = 10
    sol = tree_dp(small_tree(n), n, 1.0, P11)
    base = enumerate_policy_cost(sol, 1.0)
    for shift in (-0.05, 0.05):
        sol.beta[3] = sol.beta[3] + shift
        assert enumerate_policy_cost(sol, 1.0) > base
        sol.beta[3] = sol.beta[3] - shift


def test_terminal_value_is_infinite_off_zero():
    sol = tree_dp(small_tree(), 8, 1.0, P11)
    assert sol.value(8, 0, 0.0) == 0.0 and math.isinf(sol.value(8, 0, 0.5))
    assert np.all(sol.value.a[:-1] > 0)


def test_tree_rejections():
    with pytest.raises(TypeError):
        tree_dp(GBMMartingale(1.0, 0.2), 10, 1.0, P11)
    with pytest.raises(ValueError):
        tree_dp(small_tree(8), 10, 1.0, P11)
    with pytest.raises(ValueError):
        tree_dp(small_tree(1), 1, 1.0, P11)


def test_holdings_end_at_zero():
    sol = tree_dp(small_tree(), 8, 1.0, P11)
    x = sol.holdings(1.0, np.eye(8, dtype=bool))
    assert np.all(x[:, 0] == 1.0) and np.all(x[:, -1] == 0.0)


def test_tree_oracle_convergence():
    errs = {n: tree_oracle_error(n, 1.0, P11, n_paths=256, seed=1) for n in (100, 200, 400)}
    assert errs[200]["max"] <= 0.02
    for n in (100, 200):
        assert 1.6 <= errs[n]["mean"] / errs[2 * n]["mean"] <= 2.4


def test_tree_oracle_nu0():
    errs = [tree_oracle_error(n, 1.0, ImpactParams.reduced(1.0, 0.0), n_paths=128)["mean"] for n in (100, 200)]
    assert errs[0] < 0.02 and 1.6 <= errs[0] / errs[1] <= 2.4


# --- Euler-Lagrange ---------------------------------------------------------

def test_euler_lagrange_sinh_second_order():
    errs = []
    for n in (100, 200):
        g = TimeGrid.uniform(1.0, n)
        x = euler_lagrange_deterministic(1.0, g, ImpactParams.reduced(0.0, 1.0), np.ones(n + 1)).x
        errs.append(np.max(np.abs(x - np.sinh(1 - g.times) / math.sinh(1.0))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_euler_lagrange_vwap_exact():
    g = TimeGrid.uniform(2.0, 50)
    x = euler_lagrange_deterministic(3.0, g, ImpactParams(1.0), np.ones(51)).x
    np.testing.assert_allclose(x, vwap(3.0, g).x, atol=1e-13)


def test_euler_lagrange_drift_case():
    g = TimeGrid.uniform(1.0, 1000)
    t = g.times
    b, eta = 0.5, 1.0
    x = euler_lagrange_deterministic(1.0, g, ImpactParams(eta), 1.0 + b * t).x
    assert np.max(np.abs(x - ((1 - t) + b * t * (1 - t) / (4 * eta)))) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(3, 300), lam=st.just(0.0) | st.floats(1e-6, 3),
       nu=st.just(0.0) | st.floats(1e-6, 3),
       X=st.floats(-3, 3))
def test_euler_lagrange_residual_vanishes(seed, n, lam, nu, X):
    rng = np.random.default_rng(seed)
    g = TimeGrid(np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 1.5, n))]))
    mean = 1.0 + np.cumsum(rng.normal(0, 0.1, n + 1))
    p = ImpactParams.reduced(lam, nu)
    traj = euler_lagrange_deterministic(X, g, p, mean)
    scale = 1.0 + abs(X) + np.max(np.abs(mean)) * (lam + 1)
    assert np.max(np.abs(euler_lagrange_residual(traj, p, mean))) <= 1e-12 * scale * n


# --- perturbation and submartingale checks ----------------------------------

def test_random_directions_are_admissible():
    g = TimeGrid.uniform(1.0, 50)
    phis = random_directions(g, 5, nu=1.0, seed=3)
    assert np.all(phis[:, 0] == 0.0) and np.all(phis[:, -1] == 0.0)
    for phi in phis:
        assert _energy(phi, g, 1.0) == pytest.approx(1.0, rel=1e-12)


def test_perturbation_on_constant_price_is_exactly_quadratic():
    g = TimeGrid.uniform(1.0, 100)
    rule = make_rule("gs_martingale", 1.0, P11)
    r = perturbation_check(rule, ConstantPrice(1.0), P11, g, n_paths=4, seed=0, delta=0.05)
    for gp, gm, s in zip(r.gaps_plus, r.gaps_minus, r.slopes):
        assert 0.5 * (gp.mean + gm.mean) == pytest.approx(0.05**2, rel=1e-9)
        assert abs(s.mean) < 1e-5
    assert r.convex


def test_perturbation_detects_vwap_and_accepts_optimum():
    g = TimeGrid.uniform(1.0, 50)
    model = GBMMartingale(1.0, 0.2)
    opt = make_rule("gs_martingale", 1.0, P11)
    good = perturbation_check(opt, model, P11, g, n_paths=4000, seed=5)
    assert good.passed
    bad = perturbation_check(make_rule("vwap", 1.0, P11), model, P11, g, n_paths=4000, seed=5,
                             reference_rule=opt)
    assert bad.descent_found and bad.labels[-1] == "aligned"
    assert bad.slopes[-1].z_score() < -10
    assert set(bad.to_dict()) >= {"passed", "directions", "max_abs_z"}


def test_submartingale_constant_price_optimal_is_flat():
    g = TimeGrid.uniform(1.0, 200)
    r = submartingale_check(make_rule("gs_martingale", 1.0, P11), ConstantPrice(1.0), P11, g,
                            [0.25, 0.5, 0.75], n_paths=4, seed=0)
    assert r.flat
    assert max(abs(e.mean) for e in r.drift_from_start) < 1e-5


def test_submartingale_separates_vwap_from_optimum():
    g = TimeGrid.uniform(1.0, 50)
    model = GBMMartingale(1.0, 0.2)
    opt = submartingale_check(make_rule("gs_martingale", 1.0, P11), model, P11, g, [0.25, 0.5, 0.75],
                              n_paths=4000, seed=2)
    bad = submartingale_check(make_rule("vwap", 1.0, P11), model, P11, g, [0.25, 0.5, 0.75],
                              n_paths=4000, seed=2)
    assert opt.flat
    assert bad.monotone and bad.strictly_increasing and not bad.flat


def test_submartingale_start_value_matches_closed_form():
    g = TimeGrid.uniform(1.0, 200)
    model = GBMMartingale(1.0, 0.2)
    r = submartingale_check(make_rule("gs_martingale", 1.0, P11), model, P11, g, [0.5], n_paths=20_000, seed=1)
    closed = value_martingale(1.0, 1.0, P11, model).closed_form
    assert abs(r.start_value.mean - closed) <= 4 * r.start_value.stderr + 1e-4


def test_submartingale_checkpoints_validated():
    g = TimeGrid.uniform(1.0, 10)
    with pytest.raises(ValueError):
        submartingale_check(make_rule("vwap", 1.0, P11), ConstantPrice(1.0), P11, g, [1.0], 4, 0)
