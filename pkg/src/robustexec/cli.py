"""Batch command line: ``robustexec {trajectory,value,verify,compare,sweep} --config PATH``.

Exit codes: 0 success, 1 a verification check failed, 2 invalid config,
3 the requested computation is not supported by the model.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import checks
from .costs import value_martingale, value_martingale_nu0, value_semimartingale
from .ensemble import MCConfig
from .models import CapabilityError, TimeGrid, model_from_dict, simulate_path
from .montecarlo import FUNCTIONALS, compare, robustness_sweep
from .strategies import STRATEGY_NAMES, ImpactParams, make_rule, write_trajectory_csv

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_CAPABILITY = 0, 1, 2, 3

_NUMBER = {"type": "number"}
_COUNT = {"type": "integer", "minimum": 2}
_MODEL = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}
_STRATEGY = {
    "oneOf": [
        {"type": "string", "enum": list(STRATEGY_NAMES)},
        {"type": "object", "required": ["name"],
         "properties": {"name": {"type": "string", "enum": list(STRATEGY_NAMES)}, "label": {"type": "string"},
                        "alpha": _NUMBER, "sigma": _NUMBER},
         "additionalProperties": False},
    ]
}

SCHEMA = {
    "type": "object",
    "properties": {
        "model": _MODEL,
        "models": {"type": "array", "minItems": 1, "items": _MODEL},
        "params": {
            "type": "object",
            "required": ["eta"],
            "properties": {"eta": _NUMBER, "gamma": _NUMBER, "risk_aversion": _NUMBER, "nu": _NUMBER},
            "additionalProperties": False,
        },
        "X": _NUMBER,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "n_steps": _COUNT,
        "n_paths": _COUNT,
        "seed": {"type": "integer", "minimum": 0},
        "path_index": {"type": "integer", "minimum": 0},
        "functional": {"enum": list(FUNCTIONALS)},
        "strategy": _STRATEGY,
        "strategies": {"type": "array", "minItems": 1, "items": _STRATEGY},
        "mc": {"type": "object", "properties": {"n_paths": _COUNT, "n_steps": _COUNT},
               "additionalProperties": False},
        "checks": {
            "type": "array",
            "items": {"type": "object", "required": ["kind"],
                      "properties": {"kind": {"enum": list(checks.CHECKS)}, "name": {"type": "string"}}},
        },
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}

# fields each command needs on top of the schema
REQUIRED = {
    "trajectory": ("model", "params", "strategies"),
    "value": ("model", "params"),
    "verify": ("params",),
    "compare": ("model", "params", "strategies", "n_paths"),
    "sweep": ("models", "params", "strategy", "n_paths"),
}


class ConfigError(ValueError):
    pass


def _field_path(parts) -> str:
    out = "config"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def load_config(path, command: str, seed: int | None = None, out: str | None = None) -> dict:
    """Parse and validate a config file; raises ConfigError with a field path."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["out"] = out
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        raise ConfigError(f"{_field_path(err.path)}: {err.message}")
    for key in REQUIRED[command]:
        if key not in doc:
            raise ConfigError(f"{_field_path([key])}: required by '{command}'")
    return doc


def _build(doc: dict, key: str, fn):
    try:
        return fn()
    except KeyError as exc:
        raise ConfigError(f"{key}: missing option {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _models(doc):
    if "models" not in doc:
        return {}
    out = {}
    for i, cfg in enumerate(doc["models"]):
        cfg = dict(cfg)
        name = cfg.pop("name", f"{i}:{cfg['kind']}")
        out[name] = _build(doc, _field_path(["models", i]), lambda cfg=cfg: model_from_dict(cfg))
    return out


def _strategy_entry(item):
    if isinstance(item, str):
        return item, item, {}
    options = {k: v for k, v in item.items() if k not in ("name", "label")}
    return item.get("label", item["name"]), item["name"], options


class Experiment:
    """A validated config with its objects constructed."""

    def __init__(self, doc: dict, command: str, threads: int):
        self.doc = doc
        self.command = command
        self.threads = threads
        self.seed = int(doc.get("seed", 0))
        self.X = float(doc.get("X", 1.0))
        self.T = float(doc.get("T", 1.0))
        self.n_steps = int(doc.get("n_steps", 500))
        self.n_paths = int(doc.get("n_paths", 10_000))
        self.params = _build(doc, "config.params", lambda: ImpactParams(**doc["params"]))
        self.model = (_build(doc, "config.model", lambda: model_from_dict(doc["model"]))
                      if "model" in doc else None)
        self.models = _models(doc)
        self.grid = TimeGrid.uniform(self.T, self.n_steps)
        self.rules = {}
        items = doc.get("strategies", []) + ([doc["strategy"]] if "strategy" in doc else [])
        for i, item in enumerate(items):
            label, name, options = _strategy_entry(item)
            where = _field_path(["strategies", i] if i < len(doc.get("strategies", [])) else ["strategy"])
            if label in self.rules:
                raise ConfigError(f"{where}: duplicate strategy label {label!r}")
            self.rules[label] = _build(doc, where, lambda: make_rule(name, self.X, self.params, self.model,
                                                                     **options))
        for i, cfg in enumerate(doc.get("checks", [])):
            self._validate_check(i, cfg)
        self.out = Path(doc.get("out", "out"))

    def _validate_check(self, i, cfg):
        where = _field_path(["checks", i])
        if "params" in cfg:
            _build(self.doc, f"{where}.params", lambda: ImpactParams(**cfg["params"]))
        if "model" in cfg:
            _build(self.doc, f"{where}.model", lambda: model_from_dict(cfg["model"]))
        for j, m in enumerate(cfg.get("models", [])):
            m = {k: v for k, v in m.items() if k != "name"}
            _build(self.doc, f"{where}.models[{j}]", lambda: model_from_dict(m))
        for key in ("strategy", "suboptimal", "baseline"):
            name = cfg.get(key)
            if name and name not in STRATEGY_NAMES:
                raise ConfigError(f"{where}.{key}: unknown strategy {name!r}")

    def echo(self) -> dict:
        """Config for provenance; the output directory is left out so reruns elsewhere match."""
        return {k: v for k, v in self.doc.items() if k != "out"}


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else repr(value)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, doc: dict):
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def cmd_trajectory(exp: Experiment) -> int:
    path = simulate_path(exp.model, exp.grid, exp.seed, int(exp.doc.get("path_index", 0)))
    trajs = {label: rule(exp.grid, path.values) for label, rule in exp.rules.items()}
    exp.out.mkdir(parents=True, exist_ok=True)
    single = len(trajs) == 1
    summary = {}
    for label, traj in trajs.items():
        name = "trajectory.csv" if single else f"trajectory_{label}.csv"
        write_trajectory_csv(exp.out / name, traj, path.values)
        crossing = traj.first_negative_time()
        summary[label] = {"file": name, "first_negative_time": crossing}
        note = "" if crossing is None else f"  holdings turn negative at t={crossing!r}"
        print(f"{label}: wrote {name}{note}")
    write_json(exp.out / "trajectory.json", {"config": exp.echo(), "strategies": summary})
    return EXIT_OK


def cmd_value(exp: Experiment) -> int:
    mc_doc = exp.doc.get("mc")
    mc = None
    if mc_doc is not None:
        mc = MCConfig(n_paths=int(mc_doc.get("n_paths", exp.n_paths)), seed=exp.seed,
                      n_steps=int(mc_doc.get("n_steps", exp.n_steps)), threads=exp.threads)
    model, params = exp.model, exp.params
    if model.is_martingale:
        value = value_martingale if params.nu > 0 else value_martingale_nu0
        report = value(exp.X, exp.T, params, model, mc=mc)
        method = "martingale"
    else:
        if mc is None:
            raise CapabilityError("a non-martingale value needs Monte Carlo settings under 'mc'")
        report = value_semimartingale(exp.X, exp.T, params, model, mc)
        method = "semimartingale"
    exp.out.mkdir(parents=True, exist_ok=True)
    write_json(exp.out / "value.json", {**report.to_dict(), "method": method, "config": exp.echo()})
    print(f"value {report.closed_form!r} ({method})")
    return EXIT_OK


def cmd_verify(exp: Experiment) -> int:
    cfgs = exp.doc.get("checks", checks.DEFAULT_SUITE)

    def progress(result):
        print(f"{'PASS' if result.passed else 'FAIL'} {result.name}")

    results = checks.run_suite(cfgs, exp.params, exp.X, exp.T, exp.seed, exp.threads, progress)
    passed = all(r.passed for r in results)
    exp.out.mkdir(parents=True, exist_ok=True)
    write_json(exp.out / "verify.json", {"passed": passed, "checks": [r.to_dict() for r in results],
                                         "config": exp.echo()})
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_compare(exp: Experiment) -> int:
    if len(exp.rules) < 2:
        raise ConfigError("config.strategies: compare needs at least two strategies")
    result = compare(exp.rules, exp.model, exp.params, exp.grid, exp.n_paths, exp.seed,
                     exp.doc.get("functional", "reduced"), exp.threads)
    exp.out.mkdir(parents=True, exist_ok=True)
    result.to_csv(exp.out / "compare.csv")
    write_json(exp.out / "compare.json", {"rows": result.rows(), "config": exp.echo()})
    for row in result.rows():
        print(f"{row['rank']}. {row['strategy']}: {row['mean']!r} +- {row['stderr']!r}")
    return EXIT_OK


def cmd_sweep(exp: Experiment) -> int:
    (label, rule), = exp.rules.items()
    for i, (name, model) in enumerate(exp.models.items()):
        if not model.is_martingale:
            raise ConfigError(f"config.models[{i}]: {name!r} is not a martingale law")
    result = robustness_sweep(rule, exp.models, exp.params, exp.grid, exp.n_paths, exp.seed, exp.X,
                              exp.threads)
    exp.out.mkdir(parents=True, exist_ok=True)
    result.to_csv(exp.out / "sweep.csv")
    write_json(exp.out / "sweep.json", {**result.to_dict(), "strategy": label, "config": exp.echo()})
    print(f"worst case: {result.worst_case.name} {result.worst_case.estimate.mean!r}")
    return EXIT_OK


COMMANDS = {
    "trajectory": cmd_trajectory,
    "value": cmd_value,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustexec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (results do not depend on this)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        doc = load_config(args.config, args.command, args.seed, args.out)
        exp = Experiment(doc, args.command, args.threads)
        return COMMANDS[args.command](exp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapabilityError as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
