import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustexec.models import (
    Bachelier,
    BinomialMartingale,
    CapabilityError,
    CompensatedJumpMartingale,
    ConstantPrice,
    GBMDrift,
    GBMMartingale,
    OrnsteinUhlenbeck,
    PricePath,
    TimeGrid,
    kernel_coefficients,
    model_from_dict,
    path_rng,
    sample_paths,
    simulate_path,
    weighted_future_Y,
)
from robustexec.strategies import ImpactParams


MARTINGALES = [
    ConstantPrice(1.0),
    Bachelier(1.0, 0.3),
    GBMMartingale(1.0, 0.3),
    CompensatedJumpMartingale(1.0, 4.0, 0.1),
    BinomialMartingale.fit_gbm(1.0, 0.3, 1.0, 50),
]


def test_grid_invariants():
    g = TimeGrid.uniform(2.0, 4)
    assert g.n_steps == 4 and g.horizon == 2.0
    np.testing.assert_allclose(g.dt, 0.5)
    with pytest.raises(ValueError):
        TimeGrid.uniform(1.0, 1)
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.1, 0.5, 1.0]))
    with pytest.raises(ValueError):
        g.times[0] = 1.0


def test_nonuniform_grid_node_lookup():
    g = TimeGrid(np.array([0.0, 0.1, 0.5, 0.6, 1.0]))
    assert g.node(0.52) == 2
    assert g.node(1.0) == 4


def test_price_path_checks_length():
    g = TimeGrid.uniform(1.0, 4)
    with pytest.raises(ValueError):
        PricePath(g, np.ones(4))
    p = PricePath(g, np.arange(5.0)).truncated(2)
    assert np.isnan(p.values[3:]).all() and p.values[2] == 2.0


@pytest.mark.parametrize("model", MARTINGALES, ids=lambda m: m.kind)
def test_martingales_flagged(model):
    assert model.is_martingale
    a, b = model.mean_coefficients(0.2, np.array([0.3, 0.9]))
    np.testing.assert_array_equal(np.broadcast_to(a, 2), 0.0)
    np.testing.assert_array_equal(np.broadcast_to(b, 2), 1.0)


def test_drifted_models_not_martingale():
    assert not Bachelier(1.0, 0.2, 0.5).is_martingale
    assert not GBMDrift(1.0, 0.2, 0.1).is_martingale
    assert not OrnsteinUhlenbeck(1.0, 2.0, 1.0, 0.3).is_martingale
    assert GBMDrift(1.0, 0.2, 0.0).is_martingale


def test_conditional_mean_closed_forms():
    assert Bachelier(1.0, 0.2, 0.5).conditional_mean(0.2, 2.0, 1.2) == pytest.approx(2.5)
    assert GBMDrift(1.0, 0.2, 0.1).conditional_mean(0.0, 2.0, 1.0) == pytest.approx(2 * math.exp(0.1))
    ou = OrnsteinUhlenbeck(1.0, theta=2.0, mean=1.0, sigma=0.3)
    assert ou.conditional_mean(0.0, 3.0, 0.5) == pytest.approx(1.0 + 2.0 * math.exp(-1.0))
    with pytest.raises(ValueError):
        ou.conditional_mean(0.5, 1.0, 0.2)


def test_mean_rate_is_derivative():
    ou = OrnsteinUhlenbeck(1.0, theta=1.5, mean=0.7, sigma=0.3)
    u, h = 0.8, 1e-6
    fd = (ou.conditional_mean(0.1, 1.3, u + h) - ou.conditional_mean(0.1, 1.3, u - h)) / (2 * h)
    assert ou.conditional_mean_rate(0.1, 1.3, u) == pytest.approx(fd, rel=1e-8)


def test_second_moments():
    t = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(GBMMartingale(2.0, 0.3).second_moment(t), 4 * np.exp(0.09 * t))
    np.testing.assert_allclose(Bachelier(1.0, 0.2, 0.5).second_moment(t), (1 + 0.5 * t) ** 2 + 0.04 * t)
    np.testing.assert_allclose(CompensatedJumpMartingale(1.0, 5.0, 0.1).second_moment(t), 1 + 0.05 * t)
    with pytest.raises(CapabilityError):
        MARTINGALES[-1].second_moment(t)


@pytest.mark.parametrize(
    "model",
    [GBMMartingale(1.0, 0.3), Bachelier(1.0, 0.3, 0.2), CompensatedJumpMartingale(1.0, 5.0, 0.2),
     OrnsteinUhlenbeck(1.0, 1.5, 0.5, 0.3), GBMDrift(1.0, 0.3, 0.2)],
    ids=lambda m: m.kind,
)
def test_sampled_moments_match(model):
    g = TimeGrid.uniform(1.0, 20)
    S = sample_paths(model, g, 40_000, seed=3)
    mean_T = S[:, -1].mean()
    se = S[:, -1].std(ddof=1) / math.sqrt(S.shape[0])
    assert abs(mean_T - model.conditional_mean(0.0, model.s0, 1.0)) < 4.5 * se
    m2 = (S[:, -1] ** 2).mean()
    se2 = (S[:, -1] ** 2).std(ddof=1) / math.sqrt(S.shape[0])
    assert abs(m2 - model.second_moment(1.0)) < 4.5 * se2


def test_binomial_fit_and_sampling():
    tree = BinomialMartingale.fit_gbm(1.0, 0.2, 1.0, 100)
    assert tree.p_up == pytest.approx(0.5)
    assert tree.p_up * tree.up + (1 - tree.p_up) * tree.down == pytest.approx(1.0, abs=1e-15)
    S = tree.sample(TimeGrid.uniform(1.0, 100), 8, seed=1)
    ratios = S[:, 1:] / S[:, :-1]
    assert np.all(np.isclose(ratios, tree.up) | np.isclose(ratios, tree.down))
    with pytest.raises(ValueError):
        tree.sample(TimeGrid.uniform(1.0, 50), 2, seed=1)
    with pytest.raises(ValueError):
        BinomialMartingale(1.0, up=1.1, down=1.05)


def test_constant_sampling_is_flat():
    S = ConstantPrice(2.5).sample(TimeGrid.uniform(1.0, 10), 3, seed=0)
    assert np.all(S == 2.5)


def test_validation_errors():
    with pytest.raises(ValueError):
        GBMMartingale(-1.0, 0.2)
    with pytest.raises(ValueError):
        Bachelier(1.0, -0.1)
    with pytest.raises(ValueError):
        CompensatedJumpMartingale(1.0, -1.0, 0.1)
    with pytest.raises(ValueError):
        GBMMartingale(1.0, math.nan)


def test_path_substreams_are_positional():
    g = TimeGrid.uniform(1.0, 16)
    m = GBMMartingale(1.0, 0.2)
    full = m.sample(g, 10, seed=9)
    tail = m.sample(g, 4, seed=9, start=6)
    np.testing.assert_array_equal(full[6:], tail)
    one = simulate_path(m, g, seed=9, index=7)
    np.testing.assert_array_equal(one.values, full[7])
    assert not np.array_equal(m.sample(g, 1, seed=10)[0], full[0])
    with pytest.raises(ValueError):
        path_rng(-1, 0)


def test_model_from_dict_roundtrip_and_errors():
    for model in MARTINGALES[:-1] + [OrnsteinUhlenbeck(1.0, 1.0, 0.5, 0.2)]:
        assert model_from_dict(model.to_dict()) == model
    tree = model_from_dict({"kind": "binomial", "s0": 1.0, "sigma": 0.2, "n_steps": 10})
    assert tree == BinomialMartingale.fit_gbm(1.0, 0.2, 1.0, 10)
    assert model_from_dict(MARTINGALES[-1].to_dict()) == MARTINGALES[-1]
    with pytest.raises(ValueError, match="unknown model kind"):
        model_from_dict({"kind": "heston", "s0": 1.0})
    with pytest.raises(ValueError, match="unknown field"):
        model_from_dict({"kind": "gbm", "s0": 1.0, "vol": 0.2})
    with pytest.raises(ValueError, match="s0"):
        model_from_dict({"kind": "gbm", "sigma": 0.2})


def _kernel_by_fine_quadrature(model, t, s, T, params, weight):
    u = np.linspace(t, T, 200_001)
    w = np.sinh(params.nu * (T - u)) if weight == "sinh" else T - u
    dens = params.lam * model.conditional_mean(t, s, u) - model.conditional_mean_rate(t, s, u) / params.eta
    return np.trapezoid(w * dens, u)


@pytest.mark.parametrize("model", [GBMMartingale(1.0, 0.2), Bachelier(1.0, 0.2, 0.5),
                                   OrnsteinUhlenbeck(1.0, 2.0, 0.5, 0.3), GBMDrift(1.0, 0.2, -0.3)],
                         ids=lambda m: m.kind)
@pytest.mark.parametrize("weight", ["sinh", "linear"])
def test_kernel_matches_fine_quadrature(model, weight):
    params = ImpactParams.reduced(1.3, 0.8, eta=2.0)
    tail = np.linspace(0.3, 1.0, 15)
    got = weighted_future_Y(model, 0.3, 1.2, tail, weight, params)
    want = _kernel_by_fine_quadrature(model, 0.3, 1.2, 1.0, params, weight)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_martingale_kernel_closed_form():
    # lam * s * int_t^T sinh(nu (T-u)) du = lam * s * (cosh(nu tau) - 1) / nu
    params = ImpactParams.reduced(0.7, 1.5)
    g = TimeGrid.uniform(1.0, 40)
    A, B = kernel_coefficients(GBMMartingale(1.0, 0.3), g, "sinh", params)
    tau = 1.0 - g.times
    np.testing.assert_allclose(A, 0.0, atol=1e-15)
    np.testing.assert_allclose(B, 0.7 * (np.cosh(1.5 * tau) - 1) / 1.5, rtol=1e-13, atol=1e-15)
    assert A[-1] == 0.0 and B[-1] == 0.0


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(0.0, 3.0), mean=st.floats(-1.0, 2.0), t=st.floats(0.0, 0.5), du=st.floats(0.0, 0.5))
def test_ou_mean_tower_property(theta, mean, t, du):
    # E[E[S_v | S_u] | S_t] = E[S_v | S_t]
    ou = OrnsteinUhlenbeck(1.0, theta, mean, 0.2)
    u, v = t + du, t + 2 * du
    a1, b1 = ou.mean_coefficients(t, u)
    a2, b2 = ou.mean_coefficients(u, v)
    a, b = ou.mean_coefficients(t, v)
    assert a2 + b2 * a1 == pytest.approx(a, abs=1e-12)
    assert b2 * b1 == pytest.approx(b, abs=1e-12)
