"""Verification suite: each check runs one oracle comparison and reports pass/fail.

Checks are built from plain dicts (the ``checks`` list of a verify config).
Defaults reproduce the desk-scale acceptance settings; every numeric setting
can be overridden per check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import MCConfig
from .models import (Bachelier, CompensatedJumpMartingale, ConstantPrice, GBMMartingale, TimeGrid,
                     model_from_dict)
from .montecarlo import robustness_sweep
from .oracle import (euler_lagrange_deterministic, euler_lagrange_residual, perturbation_check,
                     submartingale_check, tree_oracle_error)
from .costs import value_martingale
from .strategies import (ExecutionTrajectory, ImpactParams, expected_cost_minimizer, gs_martingale,
                         gs_martingale_nu0, gs_semimartingale, gs_semimartingale_nu0, make_rule, mean_variance,
                         optimal, vwap)

__all__ = ["CheckResult", "CHECKS", "DEFAULT_SUITE", "run_check", "run_suite"]

DEFAULT_MODEL = {"kind": "gbm_martingale", "s0": 1.0, "sigma": 0.2}
DEFAULT_SWEEP_MODELS = [
    {"kind": "constant", "s0": 1.0},
    {"kind": "bachelier", "s0": 1.0, "sigma": 0.2},
    {"kind": "gbm_martingale", "s0": 1.0, "sigma": 0.2},
    {"kind": "compensated_jump", "s0": 1.0, "intensity": 5.0, "jump_size": 0.1},
]


@dataclass
class CheckResult:
    name: str
    kind: str
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "passed": bool(self.passed), "details": self.details}


def _params(ctx, cfg):
    doc = cfg.get("params")
    return ImpactParams(**doc) if doc else ctx["params"]


def _model(cfg, key="model", default=DEFAULT_MODEL):
    return model_from_dict(cfg.get(key, default))


def check_tree_oracle(cfg, ctx):
    n = int(cfg.get("n_steps", 200))
    X = float(cfg.get("X", ctx["X"]))
    params = ImpactParams.reduced(cfg.get("lam", 1.0), cfg.get("nu", 1.0))
    kw = dict(sigma=cfg.get("sigma", 0.2), s0=cfg.get("s0", 1.0), horizon=ctx["T"],
              n_paths=int(cfg.get("n_paths", 512)), seed=ctx["seed"])
    coarse = tree_oracle_error(n, X, params, **kw)
    fine = tree_oracle_error(2 * n, X, params, **kw)
    ratio = coarse["mean"] / fine["mean"]
    lo, hi = cfg.get("ratio_range", [1.6, 2.4])
    max_rel = cfg.get("max_rel", 0.02)
    passed = coarse["max"] <= max_rel and lo <= ratio <= hi
    return passed, {"n_steps": n, "error": coarse, "error_refined": fine, "ratio": ratio,
                    "max_rel": max_rel, "ratio_range": [lo, hi]}


def check_euler_lagrange(cfg, ctx):
    n = int(cfg.get("n_steps", 1000))
    X, T = float(cfg.get("X", ctx["X"])), ctx["T"]
    nu, b, eta = cfg.get("nu", 1.0), cfg.get("drift", 0.5), cfg.get("eta", 1.0)
    tol = cfg.get("tol", 1e-4)
    grid = TimeGrid.uniform(T, n)
    t = grid.times

    sinh_params = ImpactParams.reduced(0.0, nu)
    sinh = euler_lagrange_deterministic(X, grid, sinh_params, np.ones_like(t))
    sinh_err = float(np.max(np.abs(sinh.x - X * np.sinh(nu * (T - t)) / math.sinh(nu * T))))

    drift_params = ImpactParams(eta=eta)
    mean = 1.0 + b * t
    drift = euler_lagrange_deterministic(X, grid, drift_params, mean)
    exact = X * (T - t) / T + b * t * (T - t) / (4 * eta)
    drift_err = float(np.max(np.abs(drift.x - exact)))
    residual = float(np.max(np.abs(euler_lagrange_residual(drift, drift_params, mean))))
    model = Bachelier(1.0, 0.0, b)
    strategy_err = float(np.max(np.abs(expected_cost_minimizer(X, grid, eta, model, mean).x - drift.x)))

    scale = tol * abs(X)
    passed = sinh_err <= scale and drift_err <= scale and strategy_err <= scale
    return passed, {"sinh_error": sinh_err, "drift_error": drift_err, "drift_residual": residual,
                    "expected_cost_vs_oracle": strategy_err, "tol": scale}


def check_value(cfg, ctx):
    model = _model(cfg)
    params = _params(ctx, cfg)
    X, T = float(cfg.get("X", ctx["X"])), ctx["T"]
    mc = MCConfig(n_paths=int(cfg.get("n_paths", 100_000)), seed=ctx["seed"],
                  n_steps=int(cfg.get("n_steps", 500)), threads=ctx["threads"])
    k = cfg.get("k", 4.0)
    report = value_martingale(X, T, params, model, mc=mc)
    est = report.mc_estimate
    se = math.hypot(est.stderr, report.closed_form_stderr)
    diff = est.mean - report.closed_form
    return abs(diff) <= k * se, {**report.to_dict(), "difference": diff, "k": k}


def check_sweep(cfg, ctx):
    params = _params(ctx, cfg)
    X, T = float(cfg.get("X", ctx["X"])), ctx["T"]
    grid = TimeGrid.uniform(T, int(cfg.get("n_steps", 500)))
    n_paths = int(cfg.get("n_paths", 100_000))
    docs = cfg.get("models", DEFAULT_SWEEP_MODELS)
    models = {d.get("name", f"{i}:{d['kind']}"): model_from_dict({k: v for k, v in d.items() if k != "name"})
              for i, d in enumerate(docs)}
    name = cfg.get("strategy", "gs_martingale")
    baseline = cfg.get("baseline", "vwap")
    k_opt, k_base = cfg.get("k", 4.0), cfg.get("k_baseline", 3.0)
    opt = robustness_sweep(make_rule(name, X, params), models, params, grid, n_paths, ctx["seed"], X,
                           ctx["threads"])
    details = {"strategy": name, "sweep": opt.to_dict(),
               "within": {e.name: e.excess_within(k_opt) for e in opt.entries}}
    passed = all(details["within"].values())
    if baseline:
        base = robustness_sweep(make_rule(baseline, X, params), models, params, grid, n_paths, ctx["seed"], X,
                                ctx["threads"])
        details["baseline"] = baseline
        details["baseline_sweep"] = base.to_dict()
        details["baseline_positive"] = {e.name: e.excess_positive(k_base) for e in base.entries}
        passed = passed and all(details["baseline_positive"].values())
    return passed, details


def _rule_pair(cfg, ctx, params, X):
    model = _model(cfg)
    name = cfg.get("strategy", "gs_martingale")
    sub = cfg.get("suboptimal", "vwap")
    rule = make_rule(name, X, params, model)
    sub_rule = make_rule(sub, X, params, model) if sub else None
    return model, name, rule, sub, sub_rule


def check_perturbation(cfg, ctx):
    params = _params(ctx, cfg)
    X, T = float(cfg.get("X", ctx["X"])), ctx["T"]
    grid = TimeGrid.uniform(T, int(cfg.get("n_steps", 200)))
    model, name, rule, sub, sub_rule = _rule_pair(cfg, ctx, params, X)
    kw = dict(n_paths=int(cfg.get("n_paths", 80_000)), seed=ctx["seed"],
              n_directions=int(cfg.get("n_directions", 10)), delta=cfg.get("delta", 0.05),
              z_threshold=cfg.get("z_threshold", 3.0), threads=ctx["threads"])
    report = perturbation_check(rule, model, params, grid, **kw)
    details = {"strategy": name, "report": report.to_dict()}
    passed = report.passed
    if sub_rule is not None:
        sub_report = perturbation_check(sub_rule, model, params, grid, reference_rule=rule, **kw)
        details["suboptimal"] = sub
        details["suboptimal_report"] = sub_report.to_dict()
        passed = passed and sub_report.descent_found
    return passed, details


def check_submartingale(cfg, ctx):
    params = _params(ctx, cfg)
    X, T = float(cfg.get("X", ctx["X"])), ctx["T"]
    grid = TimeGrid.uniform(T, int(cfg.get("n_steps", 200)))
    model, name, rule, sub, sub_rule = _rule_pair(cfg, ctx, params, X)
    checkpoints = [c * T for c in cfg.get("checkpoints", [0.25, 0.5, 0.75])]
    kw = dict(n_paths=int(cfg.get("n_paths", 80_000)), seed=ctx["seed"],
              z_threshold=cfg.get("z_threshold", 3.0), threads=ctx["threads"])
    report = submartingale_check(rule, model, params, grid, checkpoints, **kw)
    details = {"strategy": name, "report": report.to_dict()}
    passed = report.flat
    if sub_rule is not None:
        sub_report = submartingale_check(sub_rule, model, params, grid, checkpoints, **kw)
        details["suboptimal"] = sub
        details["suboptimal_report"] = sub_report.to_dict()
        passed = passed and sub_report.monotone
    return passed, details


def check_nu_limit(cfg, ctx):
    X, T = float(cfg.get("X", ctx["X"])), ctx["T"]
    grid = TimeGrid.uniform(T, int(cfg.get("n_steps", 1000)))
    nu, lam = cfg.get("nu", 1e-4), cfg.get("lam", 1.0)
    model = _model(cfg)
    S = model.sample(grid, 1, ctx["seed"])[0]
    small = gs_semimartingale(X, grid, ImpactParams.reduced(lam, nu), model, S)
    limit = gs_semimartingale_nu0(X, grid, ImpactParams.reduced(lam, 0.0), model, S)
    err = float(np.max(np.abs(small.x - limit.x)))
    tol = cfg.get("tol", 1e-3) * abs(X)
    return err <= tol, {"sup_distance": err, "tol": tol, "nu": nu}


def _random_params(rng):
    lam = rng.uniform(0.1, 3.0)
    nu = rng.uniform(0.05, 3.0)
    return ImpactParams.reduced(lam, nu)


def check_invariants(cfg, ctx):
    """Exact structural properties on randomized inputs."""
    trials = int(cfg.get("trials", 1000))
    rng = np.random.default_rng(ctx["seed"])
    counts = {"fuel": 0, "volatility_independence": 0, "in_the_money": 0, "jensen": 0}
    jensen_rtol = 1e-12
    for trial in range(trials):
        n = int(rng.integers(2, 200))
        T = rng.uniform(0.1, 5.0)
        X = rng.uniform(-5.0, 5.0)
        grid = TimeGrid.uniform(T, n)
        params = _random_params(rng)
        sigma = rng.uniform(0.01, 1.0, size=2)
        model = GBMMartingale(rng.uniform(0.5, 2.0), sigma[0])
        S = model.sample(grid, 1, int(rng.integers(2**31)), start=trial)[0]

        trajs = [
            vwap(X, grid),
            mean_variance(X, grid, rng.uniform(0.1, 5.0), sigma[0], params.eta),
            gs_martingale(X, grid, params, S),
            gs_martingale_nu0(X, grid, ImpactParams.reduced(params.lam, 0.0), S),
            gs_semimartingale(X, grid, params, model, S),
            expected_cost_minimizer(X, grid, 1.0, Bachelier(1.0, sigma[0], rng.normal()), S),
        ]
        counts["fuel"] += all(tr.x[0] == X and tr.x[-1] == 0.0 for tr in trajs)

        twins = [
            (GBMMartingale(model.s0, sigma[0]), GBMMartingale(model.s0, sigma[1])),
            (Bachelier(model.s0, sigma[0]), Bachelier(model.s0, sigma[1])),
            (CompensatedJumpMartingale(model.s0, 10 * sigma[0], 0.1),
             CompensatedJumpMartingale(model.s0, 10 * sigma[1], 0.2)),
        ]
        counts["volatility_independence"] += all(
            np.array_equal(optimal(X, grid, params, a, S).x, optimal(X, grid, params, b, S).x)
            and np.array_equal(gs_semimartingale(X, grid, params, a, S).x,
                               gs_semimartingale(X, grid, params, b, S).x)
            for a, b in twins
        )

        higher = S + np.abs(rng.normal(0.0, 0.2, size=S.shape)) * (rng.random(S.shape) < 0.7)
        counts["in_the_money"] += bool(
            np.all(gs_martingale(X, grid, params, higher).x <= gs_martingale(X, grid, params, S).x)
            and np.all(gs_martingale_nu0(X, grid, ImpactParams.reduced(params.lam, 0.0), higher).x
                       <= gs_martingale_nu0(X, grid, ImpactParams.reduced(params.lam, 0.0), S).x)
        )

        ok = True
        for tr in trajs:
            energy = float(np.sum(tr.v**2 * grid.dt))
            ok &= bool(np.all(tr.jensen_slack() >= -jensen_rtol * (T * energy + X**2)))
        counts["jensen"] += ok
    passed = all(c == trials for c in counts.values())
    return passed, {"trials": trials, "passed_trials": counts, "jensen_rtol": jensen_rtol}


CHECKS = {
    "tree_oracle": check_tree_oracle,
    "euler_lagrange": check_euler_lagrange,
    "value": check_value,
    "sweep": check_sweep,
    "perturbation": check_perturbation,
    "submartingale": check_submartingale,
    "nu_limit": check_nu_limit,
    "invariants": check_invariants,
}

DEFAULT_SUITE = [{"kind": kind} for kind in CHECKS]


def run_check(cfg: dict, ctx: dict) -> CheckResult:
    kind = cfg["kind"]
    passed, details = CHECKS[kind](cfg, ctx)
    return CheckResult(cfg.get("name", kind), kind, bool(passed), details)


def run_suite(cfgs, params: ImpactParams, X: float = 1.0, T: float = 1.0, seed: int = 0, threads: int = 1,
              progress=None) -> list:
    """Run every check in order; ``progress(result)`` is called after each."""
    ctx = {"params": params, "X": X, "T": T, "seed": seed, "threads": threads}
    results = []
    for cfg in cfgs:
        result = run_check(cfg, ctx)
        if progress is not None:
            progress(result)
        results.append(result)
    return results
