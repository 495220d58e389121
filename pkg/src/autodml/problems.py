"""Built-in estimation problems assembled from losses, functionals and sieves."""

from __future__ import annotations

from typing import Mapping

from .basis import SieveConfig
from .data import Dataset
from .errors import ConfigError
from .estimators import NuisanceSpec, Problem
from .fit import FitConfig
from .functional import FunctionalSpec
from .loss import LossSpec

PROBLEMS = ("ate_rlearner", "mean_outcome", "riesz_linear", "bg_survival")


def data_bounds(data: Dataset, columns) -> dict:
    out = {}
    for c in columns:
        col = data[c]
        lo, hi = float(col.min()), float(col.max())
        out[c] = (lo, hi) if hi > lo else (lo - 1.0, lo + 1.0)
    return out


def _sieve(covs, family, additive, bounds, linear_only=(), by=None, d1=1) -> SieveConfig:
    return SieveConfig(family, tuple(covs), additive, d1, {c: bounds[c] for c in covs if c in bounds},
                       tuple(linear_only), by)


def build_problem(name: str, data: Dataset, *, family: str = "polynomial", additive: bool = True,
                  k: int = 3, k_alpha: int | None = None, k_max: int = 5, nuisance_k: int = 3,
                  t0: int = 12, riesz_ridge: object = "cv", propensity_clip: tuple | None = None,
                  bounds: Mapping[str, tuple] | None = None, fit_config: FitConfig | None = None) -> Problem:
    """Problem ``name`` over the covariates bound in ``data``.

    ``ate_rlearner``: CATE by R-learner, target the average of the CATE.
    ``mean_outcome``: regression of Y on (A, X), target E[theta(1, X)].
    ``riesz_linear``: regression of Y on (A, X), target E[theta(1, X) - theta(0, X)].
    ``bg_survival``: beta-geometric (a, b) regression, target E[P(T > t0 | A, X)].
    Covariates are rescaled using ``bounds`` (default: the observed ranges).
    Without ``fit_config``, bg_survival uses ridge 0.1 / n: the beta-geometric
    MLE drifts to the geometric limit (a, b -> inf) on small samples.
    """
    if name not in PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
    covs = data.covariates
    if not covs:
        raise ConfigError("the data must bind at least one covariate")
    cfg = fit_config or FitConfig()
    common = dict(theta_k=k, alpha_k=k_alpha, k_max=k_max, riesz_ridge=riesz_ridge, fit_config=cfg)

    if name == "bg_survival":
        if fit_config is None:
            common["fit_config"] = FitConfig(ridge=0.1 / data.n)
        a = data.roles.get("treatment")
        cols = covs + ((a,) if a and a not in covs else ())
        b = dict(data_bounds(data, cols), **(bounds or {}))
        sieve = _sieve(cols, family, additive, b, linear_only=(a,) if a else (), d1=2)
        return Problem(name, LossSpec("beta_geometric_nll", d1=2), FunctionalSpec("bg_survival", t0=t0),
                       sieve, **common)

    a = data.role("treatment")
    data.role("outcome")
    b = dict(data_bounds(data, covs), **(bounds or {}))
    x_sieve = _sieve(covs, family, additive, b)
    if name == "ate_rlearner":
        nuis = {
            "pi": NuisanceSpec(LossSpec("logistic", params={"target": a}), x_sieve, nuisance_k, "expit",
                               propensity_clip),
            "m": NuisanceSpec(LossSpec("squared_error"), x_sieve, nuisance_k),
        }
        return Problem(name, LossSpec("rlearner"), FunctionalSpec("ate_contrast"), x_sieve,
                       nuisances=nuis, **common)
    ax_sieve = _sieve(covs, family, additive, b, by=a)
    if name == "mean_outcome":
        func = FunctionalSpec("linear_custom", terms=((1.0, {a: 1.0}),))
    else:
        func = FunctionalSpec("ate_contrast", treatment=a)
    return Problem(name, LossSpec("squared_error"), func, ax_sieve, **common)


def problem_config_dict(problem: Problem) -> dict:
    return {
        "name": problem.name, "loss": problem.loss.kind, "functional": problem.functional.to_dict(),
        "theta_sieve": problem.theta_sieve.to_dict(), "theta_k": problem.theta_k,
        "alpha_k": problem.alpha_k, "k_max": problem.k_max,
        "riesz_ridge": problem.riesz_ridge,
        "nuisances": {k: {"loss": v.loss.kind, "k": v.k, "link": v.link} for k, v in problem.nuisances.items()},
    }
