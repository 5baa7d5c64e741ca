"""Liquidation trajectories: adaptive optimal strategies and reference schedules.

All strategies accept either a :class:`~robustexec.models.PricePath` or a raw
array of prices whose last axis runs over the grid nodes, so the same code
evaluates one path or a whole Monte Carlo ensemble.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .models import PriceModel, PricePath, TimeGrid, kernel_coefficients

__all__ = [
    "ImpactParams",
    "ExecutionTrajectory",
    "vwap",
    "mean_variance",
    "gs_martingale",
    "gs_martingale_nu0",
    "gs_semimartingale",
    "gs_semimartingale_nu0",
    "expected_cost_minimizer",
    "optimal",
    "h_process",
    "make_rule",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


@dataclass(frozen=True)
class ImpactParams:
    """Market impact and risk parameters.

    ``lam = risk_aversion / eta`` and ``nu = sqrt(risk_aversion * gamma / eta)``.
    The formal limit ``risk_aversion = 0`` with ``nu > 0`` (pure sinh schedule)
    is represented by ``gamma = inf``; such params drive strategies and the
    reduced functional but not :func:`~robustexec.costs.realized_cost`.
    """

    eta: float
    gamma: float = 0.0
    risk_aversion: float = 0.0
    nu: float | None = None

    def __post_init__(self):
        if not self.eta > 0 or not math.isfinite(self.eta):
            raise ValueError("eta must be a positive finite number")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not (self.risk_aversion >= 0 and math.isfinite(self.risk_aversion)):
            raise ValueError("risk_aversion must be a finite number >= 0")
        formal_limit = self.risk_aversion == 0 and math.isinf(self.gamma)
        if formal_limit:
            if self.nu is None or not self.nu > 0:
                raise ValueError("gamma = inf with zero risk aversion needs an explicit nu > 0")
            return
        implied = math.sqrt(self.risk_aversion * self.gamma / self.eta)
        if self.nu is None:
            object.__setattr__(self, "nu", implied)
        elif not math.isclose(self.nu, implied, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(f"nu={self.nu} inconsistent with sqrt(risk_aversion*gamma/eta)={implied}")

    @property
    def lam(self) -> float:
        return self.risk_aversion / self.eta

    @classmethod
    def reduced(cls, lam: float, nu: float, eta: float = 1.0) -> "ImpactParams":
        """Params from the reduced-problem constants ``lam`` and ``nu``."""
        if lam < 0 or nu < 0:
            raise ValueError("lam and nu must be >= 0")
        if lam == 0:
            if nu == 0:
                return cls(eta)
            return cls(eta, gamma=math.inf, risk_aversion=0.0, nu=nu)
        gamma = nu**2 / lam
        if nu > 0 and not (sys.float_info.min <= min(nu**2, gamma) and gamma < math.inf):
            raise ValueError(f"nu={nu} with lam={lam} is outside the representable range")
        return cls(eta, gamma=gamma, risk_aversion=lam * eta, nu=nu)

    def to_dict(self) -> dict:
        return {"eta": self.eta, "gamma": self.gamma, "risk_aversion": self.risk_aversion,
                "lam": self.lam, "nu": self.nu}


@dataclass(frozen=True, eq=False)
class ExecutionTrajectory:
    """Piecewise-linear holdings on a grid; ``x`` may carry leading batch axes."""

    grid: TimeGrid
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.shape[-1] != len(self.grid):
            raise ValueError("holdings must have one entry per grid node")
        object.__setattr__(self, "x", x)

    @property
    def X(self):
        return self.x[..., 0]

    @property
    def v(self) -> np.ndarray:
        """Trading rate on each grid interval."""
        return np.diff(self.x, axis=-1) / self.grid.dt

    def jensen_slack(self) -> np.ndarray:
        """``(T - t_k) * sum_{j >= k} v_j^2 dt_j - x_k^2`` at every node.

        Nonnegative whenever ``x_n = 0`` (Cauchy-Schwarz on the remaining
        trades), hence also with the sum taken over all intervals.
        """
        e = self.v**2 * self.grid.dt
        tail = np.flip(np.cumsum(np.flip(e, axis=-1), axis=-1), axis=-1)
        tail = np.concatenate([tail, np.zeros(tail.shape[:-1] + (1,))], axis=-1)
        return (self.grid.horizon - self.grid.times) * tail - self.x**2

    def first_negative_time(self):
        """Earliest node time with negative holdings, or None."""
        if self.x.ndim != 1:
            raise ValueError("defined for a single trajectory")
        idx = np.flatnonzero(self.x < 0)
        return float(self.grid.times[idx[0]]) if idx.size else None

    def __add__(self, other: "ExecutionTrajectory"):
        return ExecutionTrajectory(self.grid, self.x + other.x)

    def __sub__(self, other: "ExecutionTrajectory"):
        return ExecutionTrajectory(self.grid, self.x - other.x)


def _prices(grid: TimeGrid, path) -> np.ndarray:
    if isinstance(path, PricePath):
        if not path.grid.same_as(grid):
            raise ValueError("price path lives on a different grid")
        return path.values
    values = np.asarray(path, dtype=float)
    if values.shape[-1] != len(grid):
        raise ValueError("price array does not match the grid")
    return values


def _time_to_go(grid):
    return grid.horizon - grid.times


def vwap(X, grid: TimeGrid) -> ExecutionTrajectory:
    """Constant-rate liquidation ``x_t = X (T - t) / T``."""
    frac = _time_to_go(grid) / grid.horizon
    return ExecutionTrajectory(grid, frac * np.asarray(X, dtype=float)[..., None])


def mean_variance(X, grid: TimeGrid, alpha: float, sigma: float, eta: float) -> ExecutionTrajectory:
    """Deterministic mean-variance optimal schedule under Bachelier dynamics."""
    if not (alpha > 0 and sigma > 0 and eta > 0):
        raise ValueError("alpha, sigma and eta must be positive")
    kappa = math.sqrt(alpha * sigma**2 / (2 * eta))
    x = np.asarray(X, dtype=float)[..., None] * np.sinh(kappa * _time_to_go(grid)) / math.sinh(kappa * grid.horizon)
    return _pinned(grid, x, X)


def _running_integral(values, grid):
    return cumulative_trapezoid(values, grid.times, axis=-1, initial=0.0)


def _pinned(grid, x, X) -> ExecutionTrajectory:
    """Impose ``x_0 = X`` and ``x_n = 0`` exactly (the closed forms give them up to rounding)."""
    x[..., 0] = X
    x[..., -1] = 0.0
    return ExecutionTrajectory(grid, x)


def gs_martingale(X, grid: TimeGrid, params: ImpactParams, path) -> ExecutionTrajectory:
    """Optimal adaptive strategy for martingale prices, ``nu > 0``.

    Depends on the realized prices only; no volatility input.
    """
    nu, lam = params.nu, params.lam
    if not nu > 0:
        raise ValueError("gs_martingale needs nu > 0; use gs_martingale_nu0")
    S = _prices(grid, path)
    tau = _time_to_go(grid)
    integral = _running_integral(S / (1.0 + np.cosh(nu * tau)), grid)
    x = np.sinh(nu * tau) * (
        np.asarray(X, dtype=float)[..., None] / math.sinh(nu * grid.horizon)
        - lam / (2 * nu) * integral
    )
    return _pinned(grid, x, X)


def gs_martingale_nu0(X, grid: TimeGrid, params: ImpactParams, path) -> ExecutionTrajectory:
    """Optimal adaptive strategy for martingale prices without permanent impact."""
    if params.nu != 0:
        raise ValueError("gs_martingale_nu0 needs nu == 0")
    S = _prices(grid, path)
    T = grid.horizon
    frac = _time_to_go(grid) / T
    x = frac * (np.asarray(X, dtype=float)[..., None] - params.lam * T / 4 * _running_integral(S, grid))
    return _pinned(grid, x, X)


def h_process(model: PriceModel, grid: TimeGrid, params: ImpactParams, path) -> np.ndarray:
    """Normalized expected remaining ``Y``-increments at each node.

    ``nu > 0``: ``E[int_t^T sinh(nu(T-u)) dY_u | F_t] / sinh(nu(T-t))``;
    ``nu = 0``: ``E[int_t^T (T-u) dY_u | F_t] / (T-t)``. Zero at ``t = T``.
    """
    S = _prices(grid, path)
    tau = _time_to_go(grid)
    if params.nu > 0:
        A, B = kernel_coefficients(model, grid, "sinh", params)
        scale = np.sinh(params.nu * tau)
    else:
        A, B = kernel_coefficients(model, grid, "linear", params)
        scale = tau
    H = np.zeros(np.broadcast_shapes(S.shape, A.shape))
    H[..., :-1] = (A[:-1] + B[:-1] * S[..., :-1]) / scale[:-1]
    return H


def gs_semimartingale(X, grid: TimeGrid, params: ImpactParams, model: PriceModel, path) -> ExecutionTrajectory:
    """Optimal adaptive strategy for a general price law, ``nu > 0``."""
    nu = params.nu
    if not nu > 0:
        raise ValueError("gs_semimartingale needs nu > 0; use gs_semimartingale_nu0")
    H = h_process(model, grid, params, path)
    tau = _time_to_go(grid)
    sh = np.sinh(nu * tau)
    integrand = np.zeros_like(H)
    integrand[..., :-1] = H[..., :-1] / sh[:-1]
    x = sh * (np.asarray(X, dtype=float)[..., None] / math.sinh(nu * grid.horizon)
              - 0.5 * _running_integral(integrand, grid))
    return _pinned(grid, x, X)


def gs_semimartingale_nu0(X, grid: TimeGrid, params: ImpactParams, model: PriceModel, path) -> ExecutionTrajectory:
    """Optimal adaptive strategy for a general price law, ``nu = 0``."""
    if params.nu != 0:
        raise ValueError("gs_semimartingale_nu0 needs nu == 0")
    H = h_process(model, grid, params, path)
    tau = _time_to_go(grid)
    T = grid.horizon
    # T / (T-s)^2 * E[int_s^T (T-u) dY_u | F_s] = T * H_s / (T - s)
    integrand = np.zeros_like(H)
    integrand[..., :-1] = T * H[..., :-1] / tau[:-1]
    x = (tau / T) * (np.asarray(X, dtype=float)[..., None] - 0.5 * _running_integral(integrand, grid))
    return _pinned(grid, x, X)


def expected_cost_minimizer(X, grid: TimeGrid, eta: float, model: PriceModel, path) -> ExecutionTrajectory:
    """Minimizer of expected execution costs (no risk term) for any price law.

    Only the drift of the price enters; martingale prices give VWAP.
    """
    return gs_semimartingale_nu0(X, grid, ImpactParams(eta), model, path)


def optimal(X, grid: TimeGrid, params: ImpactParams, model: PriceModel, path) -> ExecutionTrajectory:
    """Dispatch to the optimal strategy for ``model`` and ``params``."""
    if model.is_martingale:
        if params.nu > 0:
            return gs_martingale(X, grid, params, path)
        return gs_martingale_nu0(X, grid, params, path)
    if params.nu > 0:
        return gs_semimartingale(X, grid, params, model, path)
    return gs_semimartingale_nu0(X, grid, params, model, path)


StrategyRule = Callable[[TimeGrid, np.ndarray], ExecutionTrajectory]


def make_rule(name: str, X: float, params: ImpactParams, model: PriceModel | None = None, **options) -> StrategyRule:
    """Named strategy as a function ``(grid, prices) -> trajectory``.

    ``mean_variance`` takes ``alpha`` and ``sigma`` options; the model-based
    rules (``gs_semimartingale*``, ``expected_cost``, ``optimal``) need ``model``.
    """
    def need_model():
        if model is None:
            raise ValueError(f"strategy {name!r} needs a model")
        return model

    if name == "vwap":
        return lambda grid, S: vwap(np.full(np.shape(S)[:-1], X), grid)
    if name == "mean_variance":
        alpha, sigma = options["alpha"], options["sigma"]
        return lambda grid, S: mean_variance(np.full(np.shape(S)[:-1], X), grid, alpha, sigma, params.eta)
    if name == "gs_martingale":
        return lambda grid, S: gs_martingale(X, grid, params, S)
    if name == "gs_martingale_nu0":
        return lambda grid, S: gs_martingale_nu0(X, grid, params, S)
    if name == "gs_semimartingale":
        m = need_model()
        return lambda grid, S: gs_semimartingale(X, grid, params, m, S)
    if name == "gs_semimartingale_nu0":
        m = need_model()
        return lambda grid, S: gs_semimartingale_nu0(X, grid, params, m, S)
    if name == "expected_cost":
        m = need_model()
        return lambda grid, S: expected_cost_minimizer(X, grid, params.eta, m, S)
    if name == "optimal":
        m = need_model()
        return lambda grid, S: optimal(X, grid, params, m, S)
    raise ValueError(f"unknown strategy {name!r}")


STRATEGY_NAMES = ("vwap", "mean_variance", "gs_martingale", "gs_martingale_nu0",
                  "gs_semimartingale", "gs_semimartingale_nu0", "expected_cost", "optimal")


def write_trajectory_csv(path, traj: ExecutionTrajectory, prices=None):
    """Write ``t, x, v, S`` rows; ``v`` of the last node and missing prices are ``nan``.

    Floats use ``repr`` (shortest round-trip form).
    """
    if traj.x.ndim != 1:
        raise ValueError("CSV export takes a single trajectory")
    grid = traj.grid
    v = np.append(traj.v, np.nan)
    S = np.full(len(grid), np.nan) if prices is None else _prices(grid, prices)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "v", "S"])
        for row in zip(grid.times, traj.x, v, S):
            writer.writerow([repr(float(value)) for value in row])


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv`: ``(trajectory, prices)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "x", "v", "S"]:
            raise ValueError(f"unexpected header {header}")
        rows = np.array([[float(value) for value in row] for row in reader])
    grid = TimeGrid(rows[:, 0])
    return ExecutionTrajectory(grid, rows[:, 1]), rows[:, 3]
