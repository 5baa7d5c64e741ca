"""Independent brute-force checks of the closed-form strategies.

* :func:`tree_dp` solves the discrete-time problem exactly on a recombining
  binomial martingale tree by backward induction over quadratic value
  functions ``V_k(x) = a_k x^2 + b_k x + c_k``.
* :func:`euler_lagrange_deterministic` solves the frozen-price problem as a
  tridiagonal linear system.
* :func:`perturbation_check` and :func:`submartingale_check` test optimality
  of an adaptive rule by simulation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .costs import reduced_increments, reduced_functional
from .ensemble import MCEstimate, map_paths
from .models import BinomialMartingale, PriceModel, TimeGrid
from .strategies import ExecutionTrajectory, ImpactParams, gs_semimartingale, gs_semimartingale_nu0, h_process

__all__ = [
    "QuadraticValue",
    "TreeSolution",
    "tree_dp",
    "enumerate_policy_cost",
    "tree_oracle_error",
    "euler_lagrange_deterministic",
    "euler_lagrange_residual",
    "random_directions",
    "perturbation_check",
    "submartingale_check",
    "PerturbationReport",
    "SubmartingaleReport",
]


@dataclass
class QuadraticValue:
    """``V_k(x) = a[k] x^2 + b[k][j] x + c[k][j]`` at tree node (k, j ups).

    ``a[n]`` is ``inf``: a nonzero position at the horizon is infeasible.
    """

    a: np.ndarray
    b: list
    c: list

    def __call__(self, k: int, j, x):
        if k == self.a.size - 1:
            return np.where(np.asarray(x) == 0, 0.0, np.inf)
        return self.a[k] * x**2 + self.b[k][j] * x + self.c[k][j]


@dataclass
class TreeSolution:
    """Exact solution of the tree problem with affine feedback rates.

    The optimal rate at node (k, j) with holdings x is
    ``alpha[k] * x + beta[k][j]``.
    """

    tree: BinomialMartingale
    grid: TimeGrid
    params: ImpactParams
    value: QuadraticValue
    alpha: np.ndarray
    beta: list

    def holdings(self, X, ups) -> np.ndarray:
        """Holdings along tree paths given their up-move indicators (…, n)."""
        ups = np.asarray(ups, dtype=bool)
        dt = self.grid.dt
        n = self.grid.n_steps
        if ups.shape[-1] != n:
            raise ValueError("need one move indicator per step")
        j = np.zeros(ups.shape[:-1], dtype=int)
        x = np.empty(ups.shape[:-1] + (n + 1,))
        x[..., 0] = X
        for k in range(n):
            rate = self.alpha[k] * x[..., k] + self.beta[k][j]
            x[..., k + 1] = x[..., k] + rate * dt[k]
            j = j + ups[..., k]
        x[..., -1] = 0.0
        return x


def tree_dp(tree: BinomialMartingale, n_steps: int, X: float, params: ImpactParams,
            horizon: float = 1.0) -> TreeSolution:
    """Backward induction for ``min E[sum_k (v_k^2 + lam S_k x_k + nu^2 x_k^2) dt]``.

    The last step is forced to liquidate (``v = -x / dt``). Each earlier step
    minimizes a quadratic in the next holding exactly.
    """
    if not isinstance(tree, BinomialMartingale):
        raise TypeError("tree_dp needs a BinomialMartingale tree")
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    if tree.n_steps and tree.n_steps != n_steps:
        raise ValueError("tree step count does not match n_steps")
    p = tree.p_up
    if not math.isclose(p * tree.up + (1 - p) * tree.down, 1.0, rel_tol=1e-14):
        raise ValueError("tree is not a martingale")
    grid = TimeGrid.uniform(horizon, n_steps)
    dt = horizon / n_steps
    D = 1.0 / dt
    lam, nu2 = params.lam, params.nu**2

    a = np.empty(n_steps + 1)
    b = [None] * (n_steps + 1)
    c = [None] * (n_steps + 1)
    alpha = np.empty(n_steps)
    beta = [None] * n_steps
    a[n_steps] = np.inf
    b[n_steps] = np.zeros(n_steps + 1)
    c[n_steps] = np.zeros(n_steps + 1)

    k = n_steps - 1
    S = tree.node_prices(k)
    a[k] = D + nu2 * dt
    b[k] = lam * S * dt
    c[k] = np.zeros(k + 1)
    alpha[k] = -D
    beta[k] = np.zeros(k + 1)

    for k in range(n_steps - 2, -1, -1):
        S = tree.node_prices(k)
        a_next = a[k + 1]
        eb = p * b[k + 1][1:] + (1 - p) * b[k + 1][:-1]
        ec = p * c[k + 1][1:] + (1 - p) * c[k + 1][:-1]
        denom = D + a_next
        a[k] = D * a_next / denom + nu2 * dt
        b[k] = D * eb / denom + lam * S * dt
        c[k] = ec - eb**2 / (4 * denom)
        alpha[k] = -D * a_next / denom
        beta[k] = -D * eb / (2 * denom)

    return TreeSolution(tree, grid, params, QuadraticValue(a, b, c), alpha, beta)


def enumerate_policy_cost(solution: TreeSolution, X: float) -> float:
    """Expected discrete cost of following the feedback, by full path enumeration.

    Exponential in the number of steps; intended for n <= ~14.
    """
    tree, grid, params = solution.tree, solution.grid, solution.params
    n = grid.n_steps
    if n > 20:
        raise ValueError("enumeration is limited to 20 steps")
    p = tree.p_up
    moves = np.array(list(itertools.product([False, True], repeat=n)))
    x = solution.holdings(X, moves)
    ups = np.concatenate([np.zeros((moves.shape[0], 1), dtype=int), np.cumsum(moves, axis=1)], axis=1)
    S = tree.s0 * tree.up**ups * tree.down ** (np.arange(n + 1) - ups)
    dt = grid.dt
    v = np.diff(x, axis=1) / dt
    step = v**2 * dt + params.lam * S[:, :-1] * x[:, :-1] * dt + params.nu**2 * x[:, :-1] ** 2 * dt
    prob = p ** moves.sum(axis=1) * (1 - p) ** (n - moves.sum(axis=1))
    return float(np.sum(prob * step.sum(axis=1)))


def tree_oracle_error(n_steps: int, X: float, params: ImpactParams, sigma: float = 0.2,
                      s0: float = 1.0, horizon: float = 1.0, n_paths: int = 512, seed: int = 0) -> dict:
    """Distance between tree-feedback and closed-form holdings along tree paths.

    Both strategies run along the same ``n_paths`` random paths of a tree fitted
    to GBM. Per path the error is ``max_k |x_dp - x_cf| / |X|``; returns the
    worst path (``"max"``) and the path average (``"mean"``). The average is
    the stable statistic for convergence-rate estimates.
    """
    tree = BinomialMartingale.fit_gbm(s0, sigma, horizon, n_steps)
    sol = tree_dp(tree, n_steps, X, params, horizon)
    grid = sol.grid
    S = tree.sample(grid, n_paths, seed)
    x_dp = sol.holdings(X, np.diff(S, axis=1) > 0)
    if params.nu > 0:
        x_cf = gs_semimartingale(X, grid, params, tree, S).x
    else:
        x_cf = gs_semimartingale_nu0(X, grid, params, tree, S).x
    per_path = np.max(np.abs(x_dp - x_cf), axis=1) / abs(X)
    return {"max": float(per_path.max()), "mean": float(per_path.mean()), "n_paths": n_paths}


def euler_lagrange_deterministic(X: float, grid: TimeGrid, params: ImpactParams, mean_path) -> ExecutionTrajectory:
    """Exact minimizer of the frozen-price discrete objective.

    Minimizes ``sum_k (dx_k/dt_k)^2 dt_k + sum_j w_j (y_j x_j + nu^2 x_j^2)``
    with ``x_0 = X``, ``x_n = 0``, trapezoid node weights ``w_j`` and
    ``y = lam m - m'/eta`` the density of ``dY`` along the mean path ``m``.
    """
    m = np.asarray(mean_path, dtype=float)
    if m.shape != grid.times.shape:
        raise ValueError("mean path must be given at the grid nodes")
    y = _y_density(grid, params, m)
    dt = grid.dt
    w = 0.5 * (dt[:-1] + dt[1:])
    inv = 1.0 / dt
    diag = 2 * (inv[:-1] + inv[1:]) + 2 * params.nu**2 * w
    off = -2 * inv[1:-1]
    rhs = -w * y[1:-1]
    rhs[0] += 2 * X * inv[0]
    banded = np.zeros((3, diag.size))
    banded[0, 1:] = off
    banded[1] = diag
    banded[2, :-1] = off
    x = np.empty(len(grid))
    x[0] = X
    x[-1] = 0.0
    x[1:-1] = solve_banded((1, 1), banded, rhs)
    return ExecutionTrajectory(grid, x)


def _y_density(grid, params, m):
    return params.lam * m - np.gradient(m, grid.times, edge_order=2) / params.eta


def euler_lagrange_residual(traj: ExecutionTrajectory, params: ImpactParams, mean_path) -> np.ndarray:
    """First-order conditions of the discrete objective at interior nodes."""
    grid = traj.grid
    x = traj.x
    dt = grid.dt
    w = 0.5 * (dt[:-1] + dt[1:])
    y = _y_density(grid, params, np.asarray(mean_path, dtype=float))
    return (2 * (x[1:-1] - x[:-2]) / dt[:-1] - 2 * (x[2:] - x[1:-1]) / dt[1:]
            + w * y[1:-1] + 2 * params.nu**2 * w * x[1:-1])


def _energy(phi, grid, nu):
    dt = grid.dt
    sq = (phi[:-1] ** 2 + phi[:-1] * phi[1:] + phi[1:] ** 2) / 3 * dt
    return float(np.sum(np.diff(phi) ** 2 / dt) + nu**2 * np.sum(sq))


def random_directions(grid: TimeGrid, n_directions: int, nu: float, seed: int = 0, n_modes: int = 6) -> np.ndarray:
    """Random admissible perturbations: zero at both ends, unit energy.

    Each direction is a random sine series sampled at the nodes (hence
    piecewise linear), normalized so ``sum (dphi^2/dt) + nu^2 int phi^2 = 1``.
    """
    rng = np.random.default_rng(seed)
    s = grid.times / grid.horizon
    modes = np.sin(np.pi * np.outer(np.arange(1, n_modes + 1), s))
    out = np.empty((n_directions, len(grid)))
    for i in range(n_directions):
        coef = rng.standard_normal(n_modes) / np.arange(1, n_modes + 1)
        phi = coef @ modes
        phi[0] = phi[-1] = 0.0
        out[i] = phi / math.sqrt(_energy(phi, grid, nu))
    return out


@dataclass
class PerturbationReport:
    slopes: list
    gaps_plus: list
    gaps_minus: list
    delta: float
    z_threshold: float
    energies: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    @property
    def max_abs_z(self) -> float:
        return max(abs(s.z_score()) for s in self.slopes)

    @property
    def stationary(self) -> bool:
        """No direction has a slope significantly different from zero."""
        return self.max_abs_z <= self.z_threshold

    @property
    def convex(self) -> bool:
        return all(g.mean > 0 for g in self.gaps_plus + self.gaps_minus)

    @property
    def descent_found(self) -> bool:
        return not self.stationary

    @property
    def passed(self) -> bool:
        return self.stationary and self.convex

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "stationary": self.stationary,
            "convex": self.convex,
            "descent_found": self.descent_found,
            "max_abs_z": self.max_abs_z,
            "delta": self.delta,
            "z_threshold": self.z_threshold,
            "directions": [
                {"label": lab, "slope": s.mean, "slope_stderr": s.stderr, "z": s.z_score(),
                 "gap_plus": gp.mean, "gap_minus": gm.mean, "energy": e}
                for lab, s, gp, gm, e in zip(self.labels, self.slopes, self.gaps_plus,
                                             self.gaps_minus, self.energies)
            ],
        }


def perturbation_check(rule, model: PriceModel, params: ImpactParams, grid: TimeGrid, n_paths: int,
                       seed: int, n_directions: int = 10, delta: float = 0.05,
                       reference_rule=None, direction_seed: int = 12345, z_threshold: float = 3.0,
                       threads: int = 1) -> PerturbationReport:
    """Directional derivatives of the simulated objective at ``rule``.

    For every direction ``phi`` the objective is evaluated at ``x + e phi`` with
    ``e`` in ``{-delta, 0, delta}`` on common paths. With ``reference_rule``
    one extra direction, aligned with ``reference - rule`` on the constant
    price path, is appended.
    """
    phis = list(random_directions(grid, n_directions, params.nu, direction_seed))
    labels = [f"random[{i}]" for i in range(n_directions)]
    if reference_rule is not None:
        flat = np.full((1, len(grid)), model.s0)
        diff = (reference_rule(grid, flat).x - rule(grid, flat).x)[0]
        energy = _energy(diff, grid, params.nu)
        if energy > 1e-20:
            phis.append(diff / math.sqrt(energy))
            labels.append("aligned")
    phis = np.array(phis)

    def per_path(S):
        base = rule(grid, S)
        out = np.empty((S.shape[0], len(phis), 3))
        j0 = reduced_functional(base, S, params)
        for i, phi in enumerate(phis):
            jp = reduced_functional(ExecutionTrajectory(grid, base.x + delta * phi), S, params)
            jm = reduced_functional(ExecutionTrajectory(grid, base.x - delta * phi), S, params)
            out[:, i] = np.stack([(jp - jm) / (2 * delta), jp - j0, jm - j0], axis=-1)
        return out

    samples = map_paths(per_path, model, grid, n_paths, seed, threads)
    est = [[MCEstimate.from_samples(samples[:, i, q], seed) for q in range(3)] for i in range(len(phis))]
    return PerturbationReport(
        slopes=[e[0] for e in est],
        gaps_plus=[e[1] for e in est],
        gaps_minus=[e[2] for e in est],
        delta=delta,
        z_threshold=z_threshold,
        energies=[_energy(phi, grid, params.nu) for phi in phis],
        labels=labels,
    )


@dataclass
class SubmartingaleReport:
    checkpoints: list
    drift_from_start: list
    increments: list
    z_threshold: float
    atol: float
    start_value: MCEstimate | None = None

    def _significant(self, est, sign):
        return sign * est.mean > self.z_threshold * est.stderr + self.atol

    @property
    def monotone(self) -> bool:
        """No increment between consecutive checkpoints is significantly negative."""
        return not any(self._significant(e, -1) for e in self.increments)

    @property
    def flat(self) -> bool:
        """Every checkpoint mean is within tolerance of the starting value."""
        return all(abs(e.mean) <= self.z_threshold * e.stderr + self.atol for e in self.drift_from_start)

    @property
    def strictly_increasing(self) -> bool:
        return all(self._significant(e, +1) for e in self.increments)

    def to_dict(self) -> dict:
        return {
            "checkpoints": list(self.checkpoints),
            "monotone": self.monotone,
            "flat": self.flat,
            "strictly_increasing": self.strictly_increasing,
            "z_threshold": self.z_threshold,
            "atol": self.atol,
            "start_value": None if self.start_value is None else self.start_value.to_dict(),
            "drift_from_start": [e.to_dict() for e in self.drift_from_start],
            "increments": [e.to_dict() for e in self.increments],
        }


def submartingale_check(rule, model: PriceModel, params: ImpactParams, grid: TimeGrid,
                        checkpoints, n_paths: int, seed: int, z_threshold: float = 3.0,
                        atol: float = 1e-5, threads: int = 1) -> SubmartingaleReport:
    """Expected running value process at interior checkpoints.

    For a strategy ``x`` the process

        C_t = int_0^t x dY + int_0^t (xdot^2 + nu^2 x^2) ds
              + nu x_t^2 coth(nu (T-t)) + x_t H_t + G_t,
        G_t = -1/4 E[int_t^T H_u^2 du | F_t]

    has nondecreasing expectation, constant for the optimal strategy. Only
    expectations are reported, so ``G_t`` is replaced by the pathwise
    ``-1/4 int_t^T H_u^2 du`` (same mean by the tower property).
    """
    checkpoints = [float(c) for c in checkpoints]
    T = grid.horizon
    if any(not 0 < c < T for c in checkpoints):
        raise ValueError("checkpoints must lie strictly inside (0, T)")
    nodes = [0] + [grid.node(c) for c in checkpoints]
    tau = T - grid.times
    nu = params.nu
    with np.errstate(divide="ignore"):
        coth_weight = nu / np.tanh(nu * tau) if nu > 0 else 1.0 / tau

    def per_path(S):
        traj = rule(grid, S)
        x = traj.x
        H = h_process(model, grid, params, S)
        running = np.concatenate([np.zeros(S.shape[:-1] + (1,)),
                                  np.cumsum(reduced_increments(traj, S, params), axis=-1)], axis=-1)
        h2 = 0.25 * np.concatenate([np.zeros(S.shape[:-1] + (1,)),
                                    np.cumsum(0.5 * (H[..., :-1] ** 2 + H[..., 1:] ** 2) * grid.dt, axis=-1)],
                                   axis=-1)
        cols = [running[..., k] + coth_weight[k] * x[..., k] ** 2 + x[..., k] * H[..., k] + h2[..., k]
                for k in nodes]
        # column 0 is C_0 without its G_0 term: -1/4 int_0^T H^2
        return np.stack(cols + [cols[0] - h2[..., -1]], axis=-1)

    samples = map_paths(per_path, model, grid, n_paths, seed, threads)
    start = samples[:, 0]
    drift = [MCEstimate.from_samples(samples[:, i] - start, seed) for i in range(1, len(nodes))]
    increments = [MCEstimate.from_samples(samples[:, i] - samples[:, i - 1], seed) for i in range(1, len(nodes))]
    return SubmartingaleReport(
        checkpoints=[float(grid.times[k]) for k in nodes[1:]],
        drift_from_start=drift,
        increments=increments,
        z_threshold=z_threshold,
        atol=atol,
        start_value=MCEstimate.from_samples(samples[:, -1], seed),
    )
