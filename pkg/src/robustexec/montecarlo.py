"""Ensemble estimates, paired strategy comparisons and robustness sweeps.

A *strategy rule* is a callable ``(grid, prices) -> ExecutionTrajectory``
(see :func:`robustexec.strategies.make_rule`) or a fixed trajectory. Every rule
in a comparison sees the same simulated paths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import realized_cost, reduced_functional, value_martingale, value_martingale_nu0
from .ensemble import MCConfig, MCEstimate, map_paths
from .models import PriceModel, TimeGrid
from .strategies import ExecutionTrajectory, ImpactParams

__all__ = [
    "FUNCTIONALS",
    "per_path_values",
    "estimate",
    "compare",
    "robustness_sweep",
    "Comparison",
    "SweepEntry",
    "SweepResult",
]

FUNCTIONALS = ("reduced", "cost", "risk")

# Excess checks allow this absolute slack on top of k * stderr so that
# deterministic models (stderr = 0) are judged on O(dt^2) discretization error.
DISCRETIZATION_ATOL = 1e-5


def _functional(name, traj, S, params):
    if name == "reduced":
        return reduced_functional(traj, S, params)
    if name == "cost":
        return realized_cost(traj, S, params).total
    if name == "risk":
        return realized_cost(traj, S, params, include_risk=True).total
    raise ValueError(f"functional must be one of {FUNCTIONALS}, got {name!r}")


def _as_rule(rule):
    if isinstance(rule, ExecutionTrajectory):
        fixed = rule
        return lambda grid, S: ExecutionTrajectory(grid, np.broadcast_to(fixed.x, S.shape))
    return rule


def per_path_values(rules, model: PriceModel, params: ImpactParams, grid: TimeGrid, n_paths: int,
                    seed: int, functional: str = "reduced", threads: int = 1) -> np.ndarray:
    """Per-path functional values, shape (n_paths, len(rules)), on common paths."""
    rules = [_as_rule(r) for r in rules]
    if functional not in FUNCTIONALS:
        raise ValueError(f"functional must be one of {FUNCTIONALS}, got {functional!r}")

    def per_chunk(S):
        return np.stack([_functional(functional, rule(grid, S), S, params) for rule in rules], axis=-1)

    return map_paths(per_chunk, model, grid, n_paths, seed, threads)


def estimate(rule, model: PriceModel, params: ImpactParams, grid: TimeGrid, n_paths: int, seed: int,
             functional: str = "reduced", threads: int = 1) -> MCEstimate:
    """Monte Carlo mean and standard error of ``functional`` under ``rule``."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    values = per_path_values([rule], model, params, grid, n_paths, seed, functional, threads)
    return MCEstimate.from_samples(values[:, 0], seed)


@dataclass
class Comparison:
    """Rules ranked by mean, with paired differences against the best."""

    names: list
    estimates: dict
    paired: dict
    unpaired_stderr: dict
    functional: str

    @property
    def ranking(self) -> list:
        return sorted(self.names, key=lambda n: self.estimates[n].mean)

    def difference(self, a: str, b: str) -> MCEstimate:
        """Paired estimate of ``mean(a) - mean(b)``."""
        return self.paired[(a, b)]

    def rows(self) -> list:
        best = self.ranking[0]
        out = []
        for rank, name in enumerate(self.ranking, start=1):
            est = self.estimates[name]
            diff = self.paired[(name, best)]
            out.append({
                "rank": rank, "strategy": name, "mean": est.mean, "stderr": est.stderr,
                "diff_vs_best": diff.mean, "diff_stderr_paired": diff.stderr,
                "diff_stderr_unpaired": self.unpaired_stderr[(name, best)],
                "n_paths": est.n_paths,
            })
        return out

    def to_csv(self, path):
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def compare(rules: dict, model: PriceModel, params: ImpactParams, grid: TimeGrid, n_paths: int, seed: int,
            functional: str = "reduced", threads: int = 1) -> Comparison:
    """Evaluate named rules on common random numbers."""
    if len(rules) < 2:
        raise ValueError("compare needs at least two rules")
    names = list(rules)
    values = per_path_values([rules[n] for n in names], model, params, grid, n_paths, seed,
                             functional, threads)
    estimates = {n: MCEstimate.from_samples(values[:, i], seed) for i, n in enumerate(names)}
    paired, unpaired = {}, {}
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            paired[(a, b)] = MCEstimate.from_samples(values[:, i] - values[:, j], seed)
            unpaired[(a, b)] = math.hypot(estimates[a].stderr, estimates[b].stderr)
    return Comparison(names, estimates, paired, unpaired, functional)


@dataclass
class SweepEntry:
    name: str
    estimate: MCEstimate
    closed_form: float | None
    closed_form_stderr: float = 0.0

    @property
    def excess(self) -> float | None:
        return None if self.closed_form is None else self.estimate.mean - self.closed_form

    @property
    def excess_stderr(self) -> float:
        return math.hypot(self.estimate.stderr, self.closed_form_stderr)

    def excess_within(self, k: float, atol: float = DISCRETIZATION_ATOL) -> bool:
        return abs(self.excess) <= k * self.excess_stderr + atol

    def excess_positive(self, k: float, atol: float = DISCRETIZATION_ATOL) -> bool:
        return self.excess > k * self.excess_stderr + atol

    def to_dict(self) -> dict:
        return {"model": self.name, "mean": self.estimate.mean, "stderr": self.estimate.stderr,
                "n_paths": self.estimate.n_paths, "closed_form": self.closed_form,
                "closed_form_stderr": self.closed_form_stderr, "excess": self.excess,
                "excess_stderr": self.excess_stderr}


@dataclass
class SweepResult:
    entries: list = field(default_factory=list)

    @property
    def worst_case(self) -> SweepEntry:
        return max(self.entries, key=lambda e: e.estimate.mean)

    def to_dict(self) -> dict:
        worst = self.worst_case
        return {"entries": [e.to_dict() for e in self.entries],
                "worst_case": {"model": worst.name, "mean": worst.estimate.mean}}

    def to_csv(self, path):
        rows = [e.to_dict() for e in self.entries]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def robustness_sweep(rule, models, params: ImpactParams, grid: TimeGrid, n_paths: int, seed: int,
                     X: float | None = None, threads: int = 1) -> SweepResult:
    """Evaluate one fixed rule under several martingale laws.

    ``models`` is a list or a ``{name: model}`` mapping. With ``X`` given,
    each model's closed-form optimal value is attached so the excess cost of
    the rule can be read off.
    """
    if not isinstance(models, dict):
        models = {f"{i}:{m.kind}": m for i, m in enumerate(models)}
    result = SweepResult()
    for name, model in models.items():
        if not model.is_martingale:
            raise ValueError(f"model {name!r} is not a martingale; the robust problem needs martingale laws")
        est = estimate(rule, model, params, grid, n_paths, seed, "reduced", threads)
        closed, closed_err = None, 0.0
        if X is not None:
            mc = MCConfig(n_paths=n_paths, seed=seed, n_steps=grid.n_steps, threads=threads)
            value = value_martingale if params.nu > 0 else value_martingale_nu0
            report = value(X, grid.horizon, params, model, mc=None if _has_second_moment(model) else mc)
            closed, closed_err = report.closed_form, report.closed_form_stderr
        result.entries.append(SweepEntry(name, est, closed, closed_err))
    return result


def _has_second_moment(model):
    try:
        model.second_moment(0.0)
    except NotImplementedError:
        return False
    return True
