"""Automatic debiased estimation of smooth functionals of M-estimands."""

from .basis import (CrossFitted, FittedFunction, FunctionSpace, KnownFunction, Linked, SieveConfig, combine,
                    constant_function, evaluate_basis, evaluate_function, nested_sieve)
from .data import CrossFitPlan, Dataset, load_csv, make_folds, make_rng, write_csv
from .estimators import (EstimateReport, FoldFits, NuisanceSpec, Problem, Session, autosieve_estimate,
                         cross_fit_nuisances, cv_plugin, estimate, normal_quantile, one_step_estimate,
                         solve_fluctuation, stabilization_factor, tmle_estimate, wald_interval)
from .fit import FitConfig, cross_validate, fit_erm
from .functional import FunctionalSpec, functional_derivative, functional_value
from .loss import LossSpec, bg_log_derivatives, loss_gradient, loss_hessian, loss_value
from .problems import build_problem
from .riesz import assemble_riesz_system, fit_riesz

__version__ = "0.1.0"

__all__ = [
    "CrossFitPlan",
    "CrossFitted",
    "Dataset",
    "EstimateReport",
    "FitConfig",
    "FittedFunction",
    "FoldFits",
    "FunctionSpace",
    "FunctionalSpec",
    "KnownFunction",
    "Linked",
    "LossSpec",
    "NuisanceSpec",
    "Problem",
    "Session",
    "SieveConfig",
    "assemble_riesz_system",
    "autosieve_estimate",
    "bg_log_derivatives",
    "build_problem",
    "combine",
    "constant_function",
    "cross_fit_nuisances",
    "cross_validate",
    "cv_plugin",
    "estimate",
    "evaluate_basis",
    "evaluate_function",
    "fit_erm",
    "fit_riesz",
    "functional_derivative",
    "functional_value",
    "load_csv",
    "loss_gradient",
    "loss_hessian",
    "loss_value",
    "make_folds",
    "make_rng",
    "nested_sieve",
    "normal_quantile",
    "one_step_estimate",
    "solve_fluctuation",
    "stabilization_factor",
    "tmle_estimate",
    "wald_interval",
    "write_csv",
]
