"""Realized costs, the reduced objective and closed-form optimal values.

Discrete conventions (all integrals over the piecewise-linear trajectory):

* ``int x dS`` is the left-point (Ito) sum ``sum_k x_k (S_{k+1} - S_k)``, so its
  expectation vanishes exactly under a martingale law.
* ``int x S dt`` uses the trapezoid rule on the product ``x_k S_k``.
* ``int x^2 dt`` and ``int xdot^2 dt`` are exact for the linear interpolant.

The risk term of :func:`realized_cost` and :func:`reduced_functional` share
these rules, so the identity

    cost + risk = gamma X^2 / 2 - X S_0 + eta * reduced

holds to rounding on every path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .ensemble import MCConfig, MCEstimate, map_paths
from .models import CapabilityError, PriceModel, TimeGrid
from .strategies import ExecutionTrajectory, ImpactParams, _prices, h_process, optimal

__all__ = [
    "CostBreakdown",
    "ValueReport",
    "realized_cost",
    "reduced_increments",
    "reduced_functional",
    "value_martingale",
    "value_martingale_nu0",
    "value_semimartingale",
]

# composite Simpson resolution for value quadratures, independent of any path grid
VALUE_QUAD_INTERVALS = 1000


@dataclass(frozen=True)
class CostBreakdown:
    total: np.ndarray
    price_term: np.ndarray
    temporary: np.ndarray
    permanent: np.ndarray
    cash_anchor: np.ndarray
    risk_term: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}


@dataclass
class ValueReport:
    """Optimal value with its three-term decomposition.

    ``closed_form_stderr`` is nonzero when one of the expectations inside the
    formula had to be simulated; ``mc_estimate`` is an independent Monte Carlo
    estimate of the reduced objective at the optimal strategy.
    """

    closed_form: float
    components: dict = field(default_factory=dict)
    mc_estimate: MCEstimate | None = None
    closed_form_stderr: float = 0.0

    def to_dict(self) -> dict:
        mc = self.mc_estimate
        return {
            "closed_form": self.closed_form,
            "closed_form_stderr": self.closed_form_stderr,
            "mc_mean": None if mc is None else mc.mean,
            "mc_stderr": None if mc is None else mc.stderr,
            "n_paths": None if mc is None else mc.n_paths,
            "components": dict(self.components),
        }


def _check(traj: ExecutionTrajectory, path):
    S = _prices(traj.grid, path)
    return traj.x, S, traj.grid.dt


def _trapezoid_xs(x, S, dt):
    xs = x * S
    return 0.5 * (xs[..., :-1] + xs[..., 1:]) * dt


def _square_integral(x, dt):
    return (x[..., :-1] ** 2 + x[..., :-1] * x[..., 1:] + x[..., 1:] ** 2) / 3.0 * dt


def realized_cost(traj: ExecutionTrajectory, path, params: ImpactParams, include_risk: bool = False) -> CostBreakdown:
    """Execution costs of ``traj`` along ``path``, split into their sources."""
    if math.isinf(params.gamma):
        raise ValueError("realized cost needs a finite permanent impact gamma")
    x, S, dt = _check(traj, path)
    X = x[..., 0]
    price_term = -np.sum(x[..., :-1] * np.diff(S, axis=-1), axis=-1)
    temporary = params.eta * np.sum(np.diff(x, axis=-1) ** 2 / dt, axis=-1)
    permanent = 0.5 * params.gamma * X**2
    cash_anchor = -X * S[..., 0]
    if include_risk:
        risk = params.risk_aversion * (
            np.sum(_trapezoid_xs(x, S, dt), axis=-1)
            + params.gamma * np.sum(_square_integral(x, dt), axis=-1)
        )
    else:
        risk = np.zeros_like(price_term)
    total = cash_anchor + price_term + temporary + permanent + risk
    return CostBreakdown(total, price_term, temporary, np.broadcast_to(permanent, total.shape),
                         cash_anchor, risk)


def reduced_increments(traj: ExecutionTrajectory, path, params: ImpactParams) -> np.ndarray:
    """Per-interval contributions to ``int x dY + int (xdot^2 + nu^2 x^2) dt``."""
    x, S, dt = _check(traj, path)
    return (
        -x[..., :-1] * np.diff(S, axis=-1) / params.eta
        + params.lam * _trapezoid_xs(x, S, dt)
        + np.diff(x, axis=-1) ** 2 / dt
        + params.nu**2 * _square_integral(x, dt)
    )


def reduced_functional(traj: ExecutionTrajectory, path, params: ImpactParams) -> np.ndarray:
    return np.sum(reduced_increments(traj, path, params), axis=-1)


def _value_grid(T):
    return np.linspace(0.0, T, VALUE_QUAD_INTERVALS + 1)


def _expected_weighted_square(model, T, weight, mc):
    """``E[int_0^T S_t^2 w(t) dt]``: closed form if available, else simulated."""
    try:
        t = _value_grid(T)
        return float(simpson(model.second_moment(t) * weight(t), x=t)), 0.0
    except CapabilityError:
        if mc is None:
            raise
    grid = TimeGrid.uniform(T, mc.n_steps)
    w = weight(grid.times)
    samples = map_paths(lambda S: np.trapezoid(S**2 * w, grid.times, axis=-1),
                        model, grid, mc.n_paths, mc.seed, mc.threads, mc.chunk_size)
    est = MCEstimate.from_samples(samples, mc.seed)
    return est.mean, est.stderr


def _optimal_mc(X, T, params, model, mc):
    grid = TimeGrid.uniform(T, mc.n_steps)
    samples = map_paths(
        lambda S: reduced_functional(optimal(X, grid, params, model, S), S, params),
        model, grid, mc.n_paths, mc.seed, mc.threads, mc.chunk_size,
    )
    return MCEstimate.from_samples(samples, mc.seed)


def _require_martingale(model):
    if not model.is_martingale:
        raise ValueError("closed-form martingale value needs a martingale model")


def value_martingale(X, T, params: ImpactParams, model: PriceModel, mc: MCConfig | None = None) -> ValueReport:
    """Minimal reduced objective for martingale prices, ``nu > 0``.

    Uses the model's closed-form second moment; a model without one falls back
    to simulation (``mc`` required). If ``mc`` is given the optimal strategy is
    also evaluated by Monte Carlo for comparison.
    """
    _require_martingale(model)
    nu, lam = params.nu, params.lam
    if not nu > 0:
        raise ValueError("value_martingale needs nu > 0; use value_martingale_nu0")
    second, second_err = _expected_weighted_square(
        model, T, lambda t: np.tanh(nu * (T - t) / 2) ** 2, mc
    )
    scale = lam**2 / (4 * nu**2)
    components = {
        "quadratic": nu * X**2 / math.tanh(nu * T),
        "linear": lam * X * model.s0 / nu * math.tanh(nu * T / 2),
        "remainder": -scale * second,
    }
    report = ValueReport(sum(components.values()), components, closed_form_stderr=scale * second_err)
    if mc is not None:
        report.mc_estimate = _optimal_mc(X, T, params, model, mc)
    return report


def value_martingale_nu0(X, T, params: ImpactParams, model: PriceModel, mc: MCConfig | None = None) -> ValueReport:
    """Minimal reduced objective for martingale prices, ``nu = 0``."""
    _require_martingale(model)
    if params.nu != 0:
        raise ValueError("value_martingale_nu0 needs nu == 0")
    lam = params.lam
    second, second_err = _expected_weighted_square(model, T, lambda t: (T - t) ** 2, mc)
    components = {
        "quadratic": X**2 / T,
        "linear": 0.5 * lam * X * model.s0 * T,
        "remainder": -(lam**2) / 16 * second,
    }
    report = ValueReport(sum(components.values()), components,
                         closed_form_stderr=lam**2 / 16 * second_err)
    if mc is not None:
        report.mc_estimate = _optimal_mc(X, T, params, model, mc)
    return report


def value_semimartingale(X, T, params: ImpactParams, model: PriceModel, mc: MCConfig) -> ValueReport:
    """Minimal reduced objective for a general price law (either ``nu``).

    The term ``-1/4 E[int H_t^2 dt]`` is simulated on ``mc.n_paths`` paths;
    ``mc_estimate`` evaluates the optimal strategy on the same paths.
    """
    grid = TimeGrid.uniform(T, mc.n_steps)
    nu = params.nu
    h0 = float(h_process(model, grid, params, np.full(len(grid), model.s0))[0])
    quadratic = nu * X**2 / math.tanh(nu * T) if nu > 0 else X**2 / T

    def per_path(S):
        H = h_process(model, grid, params, S)
        traj = optimal(X, grid, params, model, S)
        return np.stack([np.trapezoid(H**2, grid.times, axis=-1),
                         reduced_functional(traj, S, params)], axis=-1)

    samples = map_paths(per_path, model, grid, mc.n_paths, mc.seed, mc.threads, mc.chunk_size)
    h2 = MCEstimate.from_samples(samples[:, 0], mc.seed)
    components = {"quadratic": quadratic, "linear": X * h0, "remainder": -0.25 * h2.mean}
    return ValueReport(
        sum(components.values()),
        components,
        mc_estimate=MCEstimate.from_samples(samples[:, 1], mc.seed),
        closed_form_stderr=0.25 * h2.stderr,
    )
