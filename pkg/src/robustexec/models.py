"""Unaffected-price laws, path simulation and conditional-mean kernels.

Every model exposes an affine conditional mean

    E[S_u | S_t = s] = a(t, u) + b(t, u) * s,

which is all the adaptive strategies need: the conditional expectation of
future increments of the cost-driving process ``Y`` is then affine in the
observed price as well, so it can be tabulated once per grid node and
evaluated on whole path ensembles at once.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import ClassVar

import numpy as np

__all__ = [
    "CapabilityError",
    "TimeGrid",
    "PricePath",
    "PriceModel",
    "ConstantPrice",
    "Bachelier",
    "GBMMartingale",
    "GBMDrift",
    "OrnsteinUhlenbeck",
    "BinomialMartingale",
    "CompensatedJumpMartingale",
    "model_from_dict",
    "path_rng",
    "simulate_path",
    "sample_paths",
    "conditional_mean",
    "second_moment",
    "weighted_future_Y",
    "kernel_coefficients",
]


class CapabilityError(NotImplementedError):
    """Raised when a model lacks a closed-form quantity a caller asked for."""


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing discretization ``0 = t_0 < ... < t_n = T``."""

    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size < 3:
            raise ValueError("a time grid needs at least two steps (n >= 2)")
        if times[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if not np.all(np.diff(times) > 0):
            raise ValueError("time grid must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int) -> "TimeGrid":
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        times = np.linspace(0.0, horizon, int(n_steps) + 1)
        times[-1] = horizon
        return cls(times)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def same_as(self, other: "TimeGrid") -> bool:
        return self is other or np.array_equal(self.times, other.times)

    def node(self, t: float) -> int:
        """Index of the grid node closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return f"TimeGrid(T={self.horizon:g}, n={self.n_steps})"


@dataclass(frozen=True, eq=False)
class PricePath:
    """One realization of the unaffected price on a grid."""

    grid: TimeGrid
    values: np.ndarray
    seed: int | None = None
    index: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape[-1] != len(self.grid):
            raise ValueError(
                f"path has {values.shape[-1]} values for {len(self.grid)} grid nodes"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def truncated(self, k: int) -> "PricePath":
        """Copy with every value after node ``k`` replaced by NaN."""
        values = self.values.copy()
        values[..., k + 1:] = np.nan
        return PricePath(self.grid, values, self.seed, self.index)


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream keyed by ``(seed, path index)``."""
    if not 0 <= seed < 2**64 or not 0 <= index < 2**64:
        raise ValueError("seed and path index must fit in 64 unsigned bits")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


_REGISTRY: dict[str, type["PriceModel"]] = {}


@dataclass(frozen=True)
class PriceModel:
    """Base class of the unaffected-price laws.

    Subclasses implement ``_draws`` (per-path randomness from that path's own
    substream), ``_evolve`` (exact transition, vectorized over paths) and the
    affine conditional-mean coefficients.
    """

    s0: float
    kind: ClassVar[str] = ""

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.kind:
            _REGISTRY[cls.kind] = cls

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
        self._validate()

    def _validate(self):
        pass

    @property
    def is_martingale(self) -> bool:
        return True

    def mean_coefficients(self, t, u):
        """``(a, b)`` with ``E[S_u | S_t = s] = a + b s``."""
        return 0.0, 1.0

    def mean_rate_coefficients(self, t, u):
        """Derivative in ``u`` of :meth:`mean_coefficients`."""
        return 0.0, 0.0

    def conditional_mean(self, t, s, u):
        if np.any(np.asarray(u) < np.asarray(t)):
            raise ValueError("conditional mean needs u >= t")
        a, b = self.mean_coefficients(t, u)
        return a + b * np.asarray(s, dtype=float)

    def conditional_mean_rate(self, t, s, u):
        if np.any(np.asarray(u) < np.asarray(t)):
            raise ValueError("conditional mean needs u >= t")
        da, db = self.mean_rate_coefficients(t, u)
        return da + db * np.asarray(s, dtype=float)

    def second_moment(self, t):
        raise CapabilityError(f"{type(self).__name__} has no closed-form second moment")

    def _draws(self, rng: np.random.Generator, dt: np.ndarray) -> np.ndarray:
        return np.zeros(dt.size)

    def _evolve(self, draws: np.ndarray, dt: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_grid(self, grid: TimeGrid):
        pass

    def sample(self, grid: TimeGrid, n_paths: int, seed: int, start: int = 0) -> np.ndarray:
        """Paths ``start .. start+n_paths-1`` as an array of shape (n_paths, n+1)."""
        self._check_grid(grid)
        dt = grid.dt
        if type(self)._draws is PriceModel._draws:
            draws = np.zeros((n_paths, dt.size))
        else:
            draws = np.array([self._draws(path_rng(seed, start + i), dt) for i in range(n_paths)])
            draws = draws.reshape(n_paths, dt.size)
        paths = self._evolve(draws, dt)
        paths[:, 0] = self.s0
        return paths

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


def _cumulate(start, increments):
    out = np.empty((increments.shape[0], increments.shape[1] + 1))
    out[:, 0] = start
    np.cumsum(increments, axis=1, out=out[:, 1:])
    out[:, 1:] += start
    return out


@dataclass(frozen=True)
class ConstantPrice(PriceModel):
    kind: ClassVar[str] = "constant"

    def second_moment(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.s0**2)

    def _evolve(self, draws, dt):
        return np.full((draws.shape[0], dt.size + 1), float(self.s0))


@dataclass(frozen=True)
class Bachelier(PriceModel):
    """Arithmetic Brownian motion ``S_t = S_0 + sigma W_t + drift t``."""

    sigma: float = 0.0
    drift: float = 0.0
    kind: ClassVar[str] = "bachelier"

    def _validate(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def is_martingale(self):
        return self.drift == 0.0

    def mean_coefficients(self, t, u):
        return self.drift * (np.asarray(u) - t), 1.0

    def mean_rate_coefficients(self, t, u):
        return self.drift, 0.0

    def second_moment(self, t):
        t = np.asarray(t, dtype=float)
        return (self.s0 + self.drift * t) ** 2 + self.sigma**2 * t

    def _draws(self, rng, dt):
        return rng.standard_normal(dt.size)

    def _evolve(self, draws, dt):
        return _cumulate(self.s0, self.drift * dt + self.sigma * np.sqrt(dt) * draws)


@dataclass(frozen=True)
class GBMMartingale(PriceModel):
    """Risk-neutral geometric Brownian motion ``S_0 exp(sigma W_t - sigma^2 t / 2)``."""

    sigma: float = 0.0
    kind: ClassVar[str] = "gbm_martingale"

    def _validate(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive for a multiplicative model")

    def second_moment(self, t):
        return self.s0**2 * np.exp(self.sigma**2 * np.asarray(t, dtype=float))

    def _draws(self, rng, dt):
        return rng.standard_normal(dt.size)

    def _evolve(self, draws, dt):
        log_incr = self.sigma * np.sqrt(dt) * draws - 0.5 * self.sigma**2 * dt
        return self.s0 * np.exp(_cumulate(0.0, log_incr))


@dataclass(frozen=True)
class GBMDrift(PriceModel):
    sigma: float = 0.0
    mu: float = 0.0
    kind: ClassVar[str] = "gbm_drift"

    def _validate(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive for a multiplicative model")

    @property
    def is_martingale(self):
        return self.mu == 0.0

    def mean_coefficients(self, t, u):
        return 0.0, np.exp(self.mu * (np.asarray(u) - t))

    def mean_rate_coefficients(self, t, u):
        return 0.0, self.mu * np.exp(self.mu * (np.asarray(u) - t))

    def second_moment(self, t):
        t = np.asarray(t, dtype=float)
        return self.s0**2 * np.exp((2 * self.mu + self.sigma**2) * t)

    def _draws(self, rng, dt):
        return rng.standard_normal(dt.size)

    def _evolve(self, draws, dt):
        log_incr = self.sigma * np.sqrt(dt) * draws + (self.mu - 0.5 * self.sigma**2) * dt
        return self.s0 * np.exp(_cumulate(0.0, log_incr))


@dataclass(frozen=True)
class OrnsteinUhlenbeck(PriceModel):
    """``dS = theta (mean - S) dt + sigma dW``."""

    theta: float = 0.0
    mean: float = 0.0
    sigma: float = 0.0
    kind: ClassVar[str] = "ornstein_uhlenbeck"

    def _validate(self):
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def is_martingale(self):
        return self.theta == 0.0

    def mean_coefficients(self, t, u):
        decay = np.exp(-self.theta * (np.asarray(u) - t))
        return self.mean * (1.0 - decay), decay

    def mean_rate_coefficients(self, t, u):
        decay = np.exp(-self.theta * (np.asarray(u) - t))
        return self.theta * self.mean * decay, -self.theta * decay

    def _variance(self, dt):
        if self.theta == 0.0:
            return self.sigma**2 * dt
        return self.sigma**2 * -np.expm1(-2 * self.theta * dt) / (2 * self.theta)

    def second_moment(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.mean_coefficients(0.0, t)
        return (a + b * self.s0) ** 2 + self._variance(t)

    def _draws(self, rng, dt):
        return rng.standard_normal(dt.size)

    def _evolve(self, draws, dt):
        decay = np.exp(-self.theta * dt)
        noise = np.sqrt(self._variance(dt)) * draws
        out = np.empty((draws.shape[0], dt.size + 1))
        out[:, 0] = self.s0
        for k in range(dt.size):
            out[:, k + 1] = self.mean + (out[:, k] - self.mean) * decay[k] + noise[:, k]
        return out


@dataclass(frozen=True)
class BinomialMartingale(PriceModel):
    """Multiplicative up/down tree with its unique martingale probability.

    One tree step per grid interval. ``n_steps`` of 0 means "any grid".
    """

    up: float = 1.0
    down: float = 1.0
    n_steps: int = 0
    kind: ClassVar[str] = "binomial_martingale"

    def _validate(self):
        if self.s0 <= 0:
            raise ValueError("s0 must be positive for a multiplicative model")
        if not 0 < self.down < 1 < self.up:
            raise ValueError("binomial tree needs 0 < down < 1 < up")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")

    @classmethod
    def fit_gbm(cls, s0: float, sigma: float, horizon: float, n_steps: int) -> "BinomialMartingale":
        """Tree matching the one-step mean (1) and variance of a GBM factor."""
        spread = math.sqrt(math.expm1(sigma**2 * horizon / n_steps))
        if spread >= 1:
            raise ValueError("too few steps for this volatility: down factor <= 0")
        return cls(s0, up=1.0 + spread, down=1.0 - spread, n_steps=n_steps)

    @property
    def p_up(self) -> float:
        return (1.0 - self.down) / (self.up - self.down)

    def node_prices(self, k: int) -> np.ndarray:
        """Prices at step ``k`` indexed by number of up moves."""
        j = np.arange(k + 1)
        return self.s0 * self.up**j * self.down ** (k - j)

    def _check_grid(self, grid):
        if self.n_steps and grid.n_steps != self.n_steps:
            raise ValueError(f"tree has {self.n_steps} steps, grid has {grid.n_steps}")

    def _draws(self, rng, dt):
        return rng.random(dt.size)

    def _evolve(self, draws, dt):
        factors = np.where(draws < self.p_up, self.up, self.down)
        return self.s0 * np.exp(_cumulate(0.0, np.log(factors)))

    def to_dict(self):
        d = super().to_dict()
        d["n_steps"] = int(self.n_steps)
        return d


@dataclass(frozen=True)
class CompensatedJumpMartingale(PriceModel):
    """``S_t = S_0 + jump_size (N_t - intensity t)`` with ``N`` a Poisson process."""

    intensity: float = 0.0
    jump_size: float = 0.0
    kind: ClassVar[str] = "compensated_jump"

    def _validate(self):
        if self.intensity < 0:
            raise ValueError("intensity must be >= 0")

    def second_moment(self, t):
        t = np.asarray(t, dtype=float)
        return self.s0**2 + self.jump_size**2 * self.intensity * t

    def _draws(self, rng, dt):
        return rng.poisson(self.intensity * dt).astype(float)

    def _evolve(self, draws, dt):
        return _cumulate(self.s0, self.jump_size * (draws - self.intensity * dt))


_ALIASES = {
    "constant_price": "constant",
    "gbm": "gbm_martingale",
    "ou": "ornstein_uhlenbeck",
    "binomial": "binomial_martingale",
    "jump": "compensated_jump",
}


def model_from_dict(doc: dict) -> PriceModel:
    """Build a model from ``{"kind": ..., <fields>}``.

    A ``binomial_martingale`` may be given as ``{s0, sigma, horizon, n_steps}``
    instead of explicit ``up``/``down`` factors; it is then fitted to GBM.
    """
    doc = dict(doc)
    kind = doc.pop("kind", None)
    kind = _ALIASES.get(kind, kind)
    if kind not in _REGISTRY:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(_REGISTRY)}")
    cls = _REGISTRY[kind]
    if cls is BinomialMartingale and "sigma" in doc:
        return BinomialMartingale.fit_gbm(
            doc["s0"], doc["sigma"], doc.get("horizon", 1.0), int(doc["n_steps"])
        )
    names = {f for f in cls.__dataclass_fields__}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown field(s) for {kind}: {sorted(unknown)}")
    if "s0" not in doc:
        raise ValueError(f"{kind}: missing field 's0'")
    return cls(**doc)


def simulate_path(model: PriceModel, grid: TimeGrid, seed: int, index: int = 0) -> PricePath:
    values = model.sample(grid, 1, seed, start=index)[0]
    return PricePath(grid, values, seed=seed, index=index)


def sample_paths(model: PriceModel, grid: TimeGrid, n_paths: int, seed: int, start: int = 0) -> np.ndarray:
    return model.sample(grid, n_paths, seed, start)


def conditional_mean(model: PriceModel, t: float, s_t, u):
    return model.conditional_mean(t, s_t, u)


def second_moment(model: PriceModel, t):
    return model.second_moment(t)


# 4-point Gauss-Legendre per grid interval: exact for degree-7 polynomials,
# so the kernel error is negligible next to the outer trapezoid sums.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _quadrature(times: np.ndarray):
    lo, hi = times[:-1], times[1:]
    half = 0.5 * (hi - lo)[:, None]
    mid = 0.5 * (hi + lo)[:, None]
    return (mid + half * _GL_NODES).ravel(), (half * _GL_WEIGHTS).ravel()


def _weight(kind: str, u, horizon: float, nu: float):
    if kind == "sinh":
        return np.sinh(nu * (horizon - u))
    if kind == "linear":
        return horizon - u
    raise ValueError(f"weight must be 'sinh' or 'linear', got {kind!r}")


def _kernel_at(model, t, u, qw, horizon, weight, params):
    w = _weight(weight, u, horizon, params.nu) * qw
    a, b = model.mean_coefficients(t, u)
    da, db = model.mean_rate_coefficients(t, u)
    lam, eta = params.lam, params.eta
    coef_a = np.sum(w * (lam * np.broadcast_to(a, u.shape) - np.broadcast_to(da, u.shape) / eta))
    coef_b = np.sum(w * (lam * np.broadcast_to(b, u.shape) - np.broadcast_to(db, u.shape) / eta))
    return coef_a, coef_b


def weighted_future_Y(model: PriceModel, t: float, s_t, grid_tail, weight: str, params):
    """``E[ int_t^T w(u) dY_u | S_t = s_t ]`` for ``Y = -(S - S_0)/eta + lam int S``.

    ``weight`` is ``"sinh"`` (``u -> sinh(nu (T - u))``) or ``"linear"``
    (``u -> T - u``); ``grid_tail`` are the nodes ``t = u_0 < ... < u_m = T``.
    """
    tail = np.asarray(grid_tail, dtype=float)
    if tail[0] != t:
        raise ValueError("grid_tail must start at t")
    if tail.size < 2:
        return np.zeros_like(np.asarray(s_t, dtype=float))
    u, qw = _quadrature(tail)
    a, b = _kernel_at(model, t, u, qw, tail[-1], weight, params)
    return a + b * np.asarray(s_t, dtype=float)


def kernel_coefficients(model: PriceModel, grid: TimeGrid, weight: str, params):
    """Arrays ``A, B`` such that ``weighted_future_Y`` at node k is ``A[k] + B[k] s``."""
    times = grid.times
    horizon = grid.horizon
    u_all, qw_all = _quadrature(times)
    q = _GL_NODES.size
    A = np.zeros(times.size)
    B = np.zeros(times.size)
    for k in range(grid.n_steps):
        u, qw = u_all[k * q:], qw_all[k * q:]
        A[k], B[k] = _kernel_at(model, times[k], u, qw, horizon, weight, params)
    return A, B
