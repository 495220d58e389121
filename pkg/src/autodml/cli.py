"""Command-line front end.

    autodml estimate --config run.json [--data data.csv] [--out report.json]
    autodml simulate --config study.json [--out metrics.csv] [--workers N]

Configs are JSON documents; command-line flags override the file.  Failures
print a JSON error document to stderr and exit with 2 (config), 3 (data) or
4 (estimation).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

from .data import load_csv
from .errors import AutoDMLError, ConfigError, DataError
from .estimators import ESTIMATORS, Session
from .problems import PROBLEMS, build_problem, problem_config_dict
from .simulate import DGP_KINDS, DgpSpec, StudyConfig, monte_carlo

BASIS_DEFAULTS = {"family": "polynomial", "additive": True, "k": 3, "k_alpha": None, "k_max": 5, "nuisance_k": 3}
ESTIMATE_DEFAULTS = {"problem": None, "estimator": None, "data": None, "basis": {}, "t0": 12,
                     "riesz_ridge": "cv", "propensity_clip": None, "J": 5, "seed": 0, "level": 0.95, "out": None}
SIMULATE_DEFAULTS = {"dgp": None, "estimators": ["tmle"], "R": 100, "seed": 0, "J": 5, "level": 0.95,
                     "split": False, "problem": None, "basis": {}, "riesz_ridge": "cv", "propensity_clip": None,
                     "out": None, "workers": 1}


def fixture_path(name: str) -> str:
    """Path of a bundled example CSV (``cate_200`` or ``bg_200``)."""
    return str(resources.files("autodml") / "fixtures" / f"{name}.csv")


def _read_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _resolve(cfg: dict, defaults: dict, command: str) -> dict:
    unknown = sorted(set(cfg) - set(defaults) - {"command"})
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
    out = {**defaults, **cfg, "command": command}
    basis = out.get("basis") or {}
    if not isinstance(basis, dict):
        raise ConfigError("basis must be an object")
    bad = sorted(set(basis) - set(BASIS_DEFAULTS))
    if bad:
        raise ConfigError(f"unknown basis keys: {', '.join(bad)}")
    out["basis"] = {**BASIS_DEFAULTS, **basis}
    for key in ("J", "seed"):
        if not isinstance(out[key], int) or isinstance(out[key], bool):
            raise ConfigError(f"{key} must be an integer")
    if not isinstance(out["level"], (int, float)) or not 0 < out["level"] < 1:
        raise ConfigError("level must lie in (0, 1)")
    rr = out["riesz_ridge"]
    if rr != "cv" and (not isinstance(rr, (int, float)) or rr < 0):
        raise ConfigError("riesz_ridge must be 'cv' or a non-negative number")
    return out


def _problem_options(cfg: dict) -> dict:
    b = cfg["basis"]
    opts = {"family": b["family"], "additive": bool(b["additive"]), "k": int(b["k"]), "k_max": int(b["k_max"]),
            "nuisance_k": int(b["nuisance_k"]), "riesz_ridge": cfg["riesz_ridge"]}
    if b["k_alpha"] is not None:
        opts["k_alpha"] = int(b["k_alpha"])
    if cfg.get("propensity_clip") is not None:
        opts["propensity_clip"] = tuple(cfg["propensity_clip"])
    if "t0" in cfg:
        opts["t0"] = int(cfg["t0"])
    return opts


def cmd_estimate(cfg: dict) -> dict:
    cfg = _resolve(cfg, ESTIMATE_DEFAULTS, "estimate")
    if cfg["problem"] not in PROBLEMS:
        raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)}")
    if cfg["estimator"] not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {cfg['estimator']!r}; choose from {', '.join(ESTIMATORS)}")
    spec = cfg["data"]
    if not isinstance(spec, dict) or "path" not in spec or "roles" not in spec:
        raise ConfigError("data must be an object with 'path' and 'roles'")
    path = spec["path"]
    if not os.path.exists(path):
        raise DataError(f"data file {path!r} not found")
    data = load_csv(path, spec["roles"])
    problem = build_problem(cfg["problem"], data, **_problem_options(cfg))
    report = Session(data, problem, cfg["J"], cfg["seed"], float(cfg["level"])).run(cfg["estimator"])
    doc = report.to_dict()
    doc["seed"] = cfg["seed"]
    doc["problem"] = problem_config_dict(problem)
    doc["config"] = cfg
    return doc


def _dgp_specs(dgp) -> tuple:
    if not isinstance(dgp, dict) or dgp.get("kind") not in DGP_KINDS:
        raise ConfigError(f"dgp must be an object with kind in {', '.join(DGP_KINDS)}")
    allowed = {"kind", "n", "local_perturbation", "censor", "t0"}
    bad = sorted(set(dgp) - allowed)
    if bad:
        raise ConfigError(f"unknown dgp keys: {', '.join(bad)}")
    ns = dgp.get("n")
    ns = ns if isinstance(ns, list) else [ns]
    if not ns or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in ns):
        raise ConfigError("dgp.n must be a positive integer or a list of them")
    extra = {k: dgp[k] for k in ("local_perturbation", "censor", "t0") if k in dgp}
    return tuple(DgpSpec(dgp["kind"], n, 0, **extra) for n in ns)


def cmd_simulate(cfg: dict):
    cfg = _resolve(cfg, SIMULATE_DEFAULTS, "simulate")
    if not isinstance(cfg["R"], int) or cfg["R"] < 1:
        raise ConfigError("R must be a positive integer")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    if cfg["problem"] is not None and cfg["problem"] not in PROBLEMS:
        raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)}")
    specs = _dgp_specs(cfg["dgp"])
    opts = _problem_options({**cfg, "t0": specs[0].t0})
    study = StudyConfig(specs, tuple(cfg["estimators"]), cfg["R"], cfg["seed"], cfg["J"], float(cfg["level"]),
                        bool(cfg["split"]), cfg["problem"], opts)
    return monte_carlo(study, workers=cfg["workers"]), cfg


def _error_doc(exc: AutoDMLError) -> dict:
    return {"error": {"code": exc.code, "family": _family(exc),
                      "message": str(exc), "exit_code": exc.exit_code}}


def _family(exc: AutoDMLError) -> str:
    for cls in type(exc).__mro__:
        if cls.__name__ in ("ConfigError", "DataError", "EstimationError"):
            return cls.__name__
    return "AutoDMLError"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autodml", description="Automatic debiased estimation and simulation.")
    sub = p.add_subparsers(dest="command", required=True)
    e = sub.add_parser("estimate", help="estimate a target on CSV data")
    e.add_argument("--config", required=True)
    e.add_argument("--data", help="CSV path (overrides data.path)")
    e.add_argument("--out", help="report path (default: stdout)")
    e.add_argument("--estimator", help="override the estimator")
    e.add_argument("--seed", type=int, help="override the fold seed")
    s = sub.add_parser("simulate", help="run a Monte Carlo study")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="metrics CSV path (default: stdout)")
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int, help="override the base seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _read_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["out"] = args.out
        if args.command == "estimate":
            if args.data is not None:
                data = dict(cfg.get("data") or {})
                data["path"] = args.data
                cfg["data"] = data
            if args.estimator is not None:
                cfg["estimator"] = args.estimator
            doc = cmd_estimate(cfg)
            text = json.dumps(doc, indent=2)
            if doc["config"]["out"]:
                with open(doc["config"]["out"], "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            else:
                print(text)
        else:
            if args.workers is not None:
                cfg["workers"] = args.workers
            table, resolved = cmd_simulate(cfg)
            out = resolved["out"]
            if out:
                table.to_csv(out)
                replay = {k: v for k, v in resolved.items() if k != "workers"}
                with open(out + ".config.json", "w", encoding="utf-8") as fh:
                    json.dump(replay, fh, indent=2, sort_keys=True)
                    fh.write("\n")
            else:
                sys.stdout.write(table.to_csv())
    except AutoDMLError as exc:
        sys.stderr.write(json.dumps(_error_doc(exc)) + "\n")
        return exc.exit_code
    return 0
