"""Debiased estimators: cross-fitted one-step, targeted (TMLE) and sieve plug-in.

Shared notation: ``theta`` is the M-estimand fit, ``alpha`` the Hessian Riesz
representer, ``g``/``H`` the pointwise loss gradient/Hessian.  The one-step
correction is ``-P_n[g^T alpha]`` and the influence values are
``chi_i = m(z_i, theta) - plug_in - g_i^T alpha_i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .basis import CrossFitted, Function, FunctionSpace, Linked, SieveConfig, combine, nested_sieve
from .data import CrossFitPlan, Dataset, make_folds
from .errors import AutoDMLError, ConfigError, DegenerateStabilization, NoBracket, NumericRange
from .fit import FitConfig, cross_validate, cv_loop, fit_erm
from .functional import FunctionalSpec
from .loss import LossSpec
from .riesz import assemble_riesz_system, fit_riesz, riesz_pointwise_risk, select_riesz_ridge

ESTIMATORS = ("onestep", "onestep_stabilized", "tmle", "autosieve", "cv_plugin")
STABILIZATION_MAX_DEVIATION = 10.0
FLUCTUATION_BOUND = 10.0


# ---------------------------------------------------------------------------
# normal quantile and Wald intervals

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549671979276160e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00)


def _poly(coefs, x):
    out = 0.0
    for c in coefs:
        out = out * x + c
    return out


def normal_quantile(p: float) -> float:
    """Standard normal quantile: Acklam's rational approximation plus one Halley step."""
    if not 0.0 < p < 1.0:
        raise ConfigError(f"quantile level must be in (0, 1), got {p}")
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2 * math.log(p))
        x = _poly(_C, q) / (_poly(_D, q) * q + 1)
    elif p > 1 - lo:
        q = math.sqrt(-2 * math.log(1 - p))
        x = -_poly(_C, q) / (_poly(_D, q) * q + 1)
    else:
        q = p - 0.5
        r = q * q
        x = _poly(_A, r) * q / (_poly(_B, r) * r + 1)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def wald_interval(influence, psi_hat: float, level: float = 0.95) -> tuple:
    """(se, (lo, hi), degenerate) with se = sqrt(sum chi^2) / n."""
    chi = np.asarray(influence, dtype=float)
    n = chi.size
    if n < 2:
        raise ConfigError("need at least two influence values")
    q = normal_quantile(0.5 * (1 + level))
    se = math.sqrt(float(np.sum(chi * chi))) / n
    degenerate = bool(np.all(chi == chi[0]))
    if degenerate and chi[0] == 0.0:
        se = 0.0
    return se, (psi_hat - q * se, psi_hat + q * se), degenerate


# ---------------------------------------------------------------------------
# reports


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class EstimateReport:
    estimator: str
    psi_hat: float
    se: float
    ci: tuple
    level: float
    n: int
    influence: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict, repr=False)  # fitted objects, not serialised

    def to_dict(self) -> dict:
        return _jsonable({
            "estimator": self.estimator, "psi_hat": self.psi_hat, "se": self.se,
            "ci": list(self.ci), "level": self.level, "n": self.n,
            "influence": self.influence, "diagnostics": self.diagnostics,
        })

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def covers(self, truth: float) -> bool:
        return self.ci[0] <= truth <= self.ci[1]


def _report(name, psi, chi, level, diagnostics) -> EstimateReport:
    se, ci, degenerate = wald_interval(chi, psi, level)
    diagnostics = dict(diagnostics)
    if degenerate:
        diagnostics["degenerate_variance"] = True
    return EstimateReport(name, float(psi), se, ci, level, len(chi), np.asarray(chi), diagnostics)


# ---------------------------------------------------------------------------
# problem description and cross-fitted nuisances


@dataclass(frozen=True, eq=False)
class NuisanceSpec:
    """How to learn one nuisance: ERM of ``loss`` over sieve level ``k``."""

    loss: LossSpec
    sieve: SieveConfig
    k: int
    link: str | None = None
    clip: tuple | None = None
    ridge: float = 0.0

    def fit(self, data: Dataset, rows=None, cfg: FitConfig | None = None) -> Function:
        cfg = replace(cfg or FitConfig(), ridge=self.ridge)
        f = fit_erm(self.loss, nested_sieve(self.sieve, self.k), data, rows, cfg)
        return Linked(f, self.link, self.clip) if (self.link or self.clip) else f


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything an estimator needs besides the data.

    ``loss`` is unbound: nuisances named in ``nuisances`` (learned) or
    ``known`` (injected functions) are attached after fitting.
    """

    name: str
    loss: LossSpec
    functional: FunctionalSpec
    theta_sieve: SieveConfig
    theta_k: int = 3
    alpha_sieve: SieveConfig | FunctionSpace | None = None
    alpha_k: int | None = None
    nuisances: Mapping[str, NuisanceSpec] = field(default_factory=dict)
    known: Mapping[str, Function] = field(default_factory=dict)
    riesz_ridge: object = "cv"
    k_max: int = 5
    fit_config: FitConfig = field(default_factory=FitConfig)

    @property
    def alpha_space(self) -> FunctionSpace:
        if isinstance(self.alpha_sieve, FunctionSpace):
            return self.alpha_sieve
        return nested_sieve(self.alpha_sieve or self.theta_sieve, self.alpha_k or self.theta_k)

    @property
    def theta_space(self):
        return nested_sieve(self.theta_sieve, self.theta_k)


@dataclass(eq=False)
class FoldFits:
    """Per-fold fits and their cross-fitted views.

    ``loss`` already has the cross-fitted nuisances bound; ``theta`` and
    ``alpha`` evaluate row i with the fit of fold j(i).
    """

    loss: LossSpec
    functional: FunctionalSpec
    theta: Function
    alpha: Function
    assignment: np.ndarray
    eta: Mapping[str, Function] = field(default_factory=dict)
    theta_folds: tuple = ()
    alpha_folds: tuple = ()
    diagnostics: dict = field(default_factory=dict)


def _cross(functions, assignment) -> Function:
    return CrossFitted(tuple(functions), assignment)


def fit_nuisances(data: Dataset, plan: CrossFitPlan, problem: Problem, train: Dataset | None = None) -> dict:
    """Cross-fitted nuisance functions (or fits on a separate ``train`` sample)."""
    eta: dict = dict(problem.known)
    for name, spec in problem.nuisances.items():
        if name in eta:
            continue
        try:
            if train is not None:
                eta[name] = _cross([spec.fit(train, None, problem.fit_config)], plan.assignment)
            else:
                eta[name] = _cross([spec.fit(data, plan.train(j), problem.fit_config) for j in range(plan.J)],
                                   plan.assignment)
        except AutoDMLError as exc:
            exc.args = (f"nuisance {name!r}: {exc}",)
            raise
    return eta


def cross_fit_nuisances(data: Dataset, plan: CrossFitPlan, problem: Problem, *,
                        eta: Mapping[str, Function] | None = None, theta: Function | None = None,
                        alpha: Function | None = None, train: Dataset | None = None) -> FoldFits:
    """Fold-wise nuisance, M-estimand and Riesz fits.

    Fold j's fits never use rows of fold j directly; each training row i sees
    the nuisances (and theta) of its own fold j(i), so some information from
    fold j leaks in through those earlier fits.  ``eta``/``theta``/``alpha``
    inject known functions and skip the corresponding step.  With ``train``
    all fits come from that separate sample and ``plan`` should be a single
    fold over ``data``.
    """
    func = problem.functional
    if eta is None:
        eta = fit_nuisances(data, plan, problem, train)
    loss = problem.loss.with_nuisances(eta)
    diagnostics: dict = {"J": plan.J, "fold_seed": plan.seed, "fold_sizes": plan.sizes()}

    if train is not None:
        # nuisances on train are fitted in-sample there
        eta_train = {k: (v.functions[0] if isinstance(v, CrossFitted) and len(v.functions) == 1 else v)
                     for k, v in eta.items()}
        loss_train = problem.loss.with_nuisances(eta_train)
        th = theta if theta is not None else fit_erm(loss_train, problem.theta_space, train, None,
                                                     problem.fit_config)
        if alpha is None:
            ridge = problem.riesz_ridge
            if ridge == "cv":
                ridge, _ = select_riesz_ridge(loss_train, th, func, problem.alpha_space, train,
                                              make_folds(train.n, 5, plan.seed))
            system = assemble_riesz_system(loss_train, th, func, problem.alpha_space, train)
            al = fit_riesz(system, float(ridge))
            diagnostics["riesz_ridge"] = float(ridge)
        else:
            al = alpha
        return FoldFits(loss, func, _cross([th], plan.assignment), _cross([al], plan.assignment),
                        plan.assignment, eta, (th,), (al,), diagnostics)

    if theta is not None:
        theta_cf, theta_folds = theta, ()
    else:
        theta_folds = []
        for j in range(plan.J):
            try:
                theta_folds.append(fit_erm(loss, problem.theta_space, data, plan.train(j), problem.fit_config))
            except AutoDMLError as exc:
                exc.args = (f"theta fold {j}: {exc}",)
                raise
        theta_folds = tuple(theta_folds)
        theta_cf = _cross(theta_folds, plan.assignment)

    if alpha is not None:
        alpha_cf, alpha_folds = alpha, ()
    else:
        space = problem.alpha_space
        ridge = problem.riesz_ridge
        if ridge == "cv":
            ridge, risks = select_riesz_ridge(loss, theta_cf, func, space, data, plan)
            diagnostics["riesz_ridge_cv"] = list(risks)
        diagnostics["riesz_ridge"] = float(ridge)
        alpha_folds = tuple(
            fit_riesz(assemble_riesz_system(loss, theta_cf, func, space, data, plan.train(j)), float(ridge))
            for j in range(plan.J))
        alpha_cf = _cross(alpha_folds, plan.assignment)
    return FoldFits(loss, func, theta_cf, alpha_cf, plan.assignment, eta, theta_folds, alpha_folds, diagnostics)


# ---------------------------------------------------------------------------
# one-step and stabilisation


def _pieces(data: Dataset, fits: FoldFits):
    mvals = fits.functional.values(fits.theta, data)
    pl = fits.loss.evaluate(fits.theta, data)
    a = fits.alpha.values(data)
    return mvals, pl, a


def stabilization_factor(data: Dataset, plan: CrossFitPlan | None, fits: FoldFits) -> float:
    """eps_n = sum m_dot(alpha) / sum alpha^T H alpha.

    Raises DegenerateStabilization when the denominator is not positive or
    the factor strays more than 10 from one.
    """
    mdot = fits.functional.derivative(fits.theta, fits.alpha, data)
    H = fits.loss.evaluate(fits.theta, data).hess
    a = fits.alpha.values(data)
    den = float(np.einsum("ij,ijk,ik->", a, H, a))
    num = float(np.sum(mdot))
    if not den > 0:
        raise DegenerateStabilization(f"non-positive denominator {den:.3g}")
    eps = num / den
    if not math.isfinite(eps) or abs(eps - 1) > STABILIZATION_MAX_DEVIATION:
        raise DegenerateStabilization(f"stabilization factor {eps:.3g} out of range")
    return eps


def one_step_estimate(data: Dataset, plan: CrossFitPlan | None, fits: FoldFits, stabilize: bool = False,
                      level: float = 0.95) -> EstimateReport:
    mvals, pl, a = _pieces(data, fits)
    plug = float(np.mean(mvals))
    corr = np.einsum("ij,ij->i", pl.grad, a)
    diag = dict(fits.diagnostics)
    name = "onestep"
    if stabilize:
        name = "onestep_stabilized"
        try:
            eps = stabilization_factor(data, plan, fits)
            corr = eps * corr
            diag["stabilization_factor"] = eps
        except DegenerateStabilization as exc:
            diag["stabilization_factor"] = None
            diag["stabilization_fallback"] = str(exc)
    psi = plug - float(np.mean(corr))
    chi = mvals - plug - corr
    diag.update(plug_in=plug, correction=-float(np.mean(corr)))
    return _report(name, psi, chi, level, diag)


# ---------------------------------------------------------------------------
# targeting


def _score_and_slope(loss: LossSpec, theta: Function, a: np.ndarray, data: Dataset, rows, eps: float):
    th = theta.values(data, rows) + eps * a
    pl = loss.pointwise(th, data, rows)
    return float(np.sum(pl.grad * a)), float(np.einsum("ij,ijk,ik->", a, pl.hess, a))


def solve_fluctuation(loss: LossSpec, theta: Function, alpha: Function, data: Dataset, rows=None,
                      tol: float = 1e-12) -> float:
    """Root of eps -> sum_i g(theta + eps alpha)_i^T alpha_i on [-10, 10].

    Quadratic losses use the closed form; otherwise Newton steps are
    safeguarded by bisection inside a sign-change bracket.
    """
    a = alpha.values(data, rows)
    n = a.shape[0]
    if not np.any(a):
        return 0.0
    s0, d0 = _score_and_slope(loss, theta, a, data, rows, 0.0)
    if abs(s0) <= tol * n:
        return 0.0
    if loss.is_quadratic:
        if not d0 > 0:
            raise NoBracket("flat fluctuation direction with non-zero score")
        return -s0 / d0

    def score(e):
        try:
            return _score_and_slope(loss, theta, a, data, rows, e)
        except NumericRange:
            return None

    # bracket: score is increasing for convex risks, so look on the side opposite the sign of s0
    lo, hi = (0.0, FLUCTUATION_BOUND) if s0 < 0 else (-FLUCTUATION_BOUND, 0.0)
    far = hi if s0 < 0 else lo
    sf = score(far)
    while sf is None and abs(far) > 1e-8:
        far *= 0.5
        sf = score(far)
    if sf is None or np.sign(sf[0]) == np.sign(s0):
        raise NoBracket(f"score does not change sign on [{lo:g}, {hi:g}]")
    if s0 < 0:
        hi = far
    else:
        lo = far
    x, (s, d) = 0.0, (s0, d0)
    for _ in range(200):
        step_ok = d > 0
        if step_ok:
            x_new = x - s / d
            step_ok = lo < x_new < hi
        if not step_ok:
            x_new = 0.5 * (lo + hi)
        r = score(x_new)
        if r is None:
            raise NoBracket("fluctuation left the numerically valid range")
        x, (s, d) = x_new, r
        if abs(s) <= tol * n:
            return x
        if s < 0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            break
    if abs(s) <= 1e-10 * n:
        return x
    raise NoBracket(f"fluctuation score {s:.3g} did not reach tolerance")


def tmle_estimate(data: Dataset, plan: CrossFitPlan | None, fits: FoldFits, level: float = 0.95) -> EstimateReport:
    eps = solve_fluctuation(fits.loss, fits.theta, fits.alpha, data)
    theta_star = combine(fits.theta, eps, fits.alpha)
    mvals = fits.functional.values(theta_star, data)
    psi = float(np.mean(mvals))
    pl = fits.loss.evaluate(theta_star, data)
    a = fits.alpha.values(data)
    score = np.einsum("ij,ij->i", pl.grad, a)
    chi = mvals - psi - score
    diag = dict(fits.diagnostics)
    diag.update(epsilon=eps, score=float(np.mean(score)),
                plug_in_initial=float(np.mean(fits.functional.values(fits.theta, data))))
    rep = _report("tmle", psi, chi, level, diag)
    rep.extras["theta_star"] = theta_star
    return rep


# ---------------------------------------------------------------------------
# sieve plug-in with automatic undersmoothing


@dataclass
class SieveSelection:
    k_theta: int
    k_alpha: int
    cv_theta: tuple
    cv_alpha: tuple


def select_sieve(data: Dataset, plan: CrossFitPlan, loss: LossSpec, func: FunctionalSpec,
                 sieve: SieveConfig, k_max: int, cfg: FitConfig | None = None) -> SieveSelection:
    """k_theta by CV of the loss; k_alpha by CV of the Riesz risk with theta at k_theta."""
    cv_t = cross_validate(loss, sieve, k_max, data, plan, cfg)
    space_t = nested_sieve(sieve, cv_t.k_selected)
    theta_folds = [fit_erm(loss, space_t, data, plan.train(j), cfg) for j in range(plan.J)]

    def fold_risk(k, j):
        th = theta_folds[j]
        alpha = fit_riesz(assemble_riesz_system(loss, th, func, nested_sieve(sieve, k), data, plan.train(j)))
        return riesz_pointwise_risk(loss, th, func, alpha, data, plan.fold(j))

    cv_a = cv_loop(k_max, plan, fold_risk)
    return SieveSelection(cv_t.k_selected, cv_a.k_selected, cv_t.risks, cv_a.risks)


def sieve_plugin(data: Dataset, loss: LossSpec, func: FunctionalSpec, sieve: SieveConfig, k: int,
                 name: str, level: float = 0.95, cfg: FitConfig | None = None, diagnostics=None) -> EstimateReport:
    """Plug-in at the unpenalised ERM over H_k; alpha over H_k is used only for the variance."""
    space = nested_sieve(sieve, k)
    theta = fit_erm(loss, space, data, None, cfg)
    alpha = fit_riesz(assemble_riesz_system(loss, theta, func, space, data))
    mvals = func.values(theta, data)
    psi = float(np.mean(mvals))
    g = loss.evaluate(theta, data).grad
    corr = np.einsum("ij,ij->i", g, alpha.values(data))
    chi = mvals - psi - corr
    diag = dict(diagnostics or {})
    diag.update(k=k, implicit_correction=float(np.mean(corr)), theta_grad_norm=theta.info["grad_norm"])
    return _report(name, psi, chi, level, diag)


def autosieve_estimate(data: Dataset, plan: CrossFitPlan, loss: LossSpec, func: FunctionalSpec,
                       sieve: SieveConfig, k_max: int, level: float = 0.95, cfg: FitConfig | None = None,
                       selection: SieveSelection | None = None, plugin_only: bool = False) -> EstimateReport:
    """autoSieve: k = max(k_theta, k_alpha).  ``plugin_only`` gives the CV plug-in (k = k_theta)."""
    sel = selection or select_sieve(data, plan, loss, func, sieve, k_max, cfg)
    k = sel.k_theta if plugin_only else max(sel.k_theta, sel.k_alpha)
    diag = {"k_theta": sel.k_theta, "k_alpha": sel.k_alpha, "cv_theta": list(sel.cv_theta),
            "cv_alpha": list(sel.cv_alpha), "J": plan.J, "fold_seed": plan.seed}
    return sieve_plugin(data, loss, func, sieve, k, "cv_plugin" if plugin_only else "autosieve", level, cfg, diag)


def cv_plugin(data, plan, loss, func, sieve, k_max, level=0.95, cfg=None, selection=None) -> EstimateReport:
    return autosieve_estimate(data, plan, loss, func, sieve, k_max, level, cfg, selection, plugin_only=True)


# ---------------------------------------------------------------------------
# running several estimators on one dataset with shared fits


class Session:
    """Lazily computes and caches fits shared between estimators on one dataset."""

    def __init__(self, data: Dataset, problem: Problem, J: int = 5, seed: int = 0, level: float = 0.95,
                 train: Dataset | None = None):
        if not 0 < level < 1:
            raise ConfigError("level must lie in (0, 1)")
        self.data, self.problem, self.J, self.seed, self.level, self.train = data, problem, J, seed, level, train
        self._plan = None
        self._eta = None
        self._fits = None
        self._selection = None

    @property
    def plan(self) -> CrossFitPlan:
        if self._plan is None:
            self._plan = make_folds(self.data.n, self.J, self.seed)
        return self._plan

    @property
    def fit_plan(self) -> CrossFitPlan:
        return CrossFitPlan.single(self.data.n) if self.train is not None else self.plan

    @property
    def eta(self) -> dict:
        if self._eta is None:
            self._eta = fit_nuisances(self.data, self.fit_plan, self.problem, self.train)
        return self._eta

    @property
    def fits(self) -> FoldFits:
        if self._fits is None:
            self._fits = cross_fit_nuisances(self.data, self.fit_plan, self.problem, eta=self.eta, train=self.train)
        return self._fits

    @property
    def selection(self) -> SieveSelection:
        if self._selection is None:
            loss = self.problem.loss.with_nuisances(self.eta)
            self._selection = select_sieve(self.data, self.plan, loss, self.problem.functional,
                                           self.problem.theta_sieve, self.problem.k_max, self.problem.fit_config)
        return self._selection

    def run(self, estimator: str) -> EstimateReport:
        if estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}")
        if estimator == "onestep":
            rep = one_step_estimate(self.data, self.fit_plan, self.fits, False, self.level)
        elif estimator == "onestep_stabilized":
            rep = one_step_estimate(self.data, self.fit_plan, self.fits, True, self.level)
        elif estimator == "tmle":
            rep = tmle_estimate(self.data, self.fit_plan, self.fits, self.level)
        else:
            loss = self.problem.loss.with_nuisances(self.eta)
            rep = autosieve_estimate(self.data, self.plan, loss, self.problem.functional, self.problem.theta_sieve,
                                     self.problem.k_max, self.level, self.problem.fit_config, self.selection,
                                     plugin_only=estimator == "cv_plugin")
        rep.diagnostics["split_sample"] = self.train is not None
        return rep


def estimate(data: Dataset, problem: Problem, estimator: str, J: int = 5, seed: int = 0, level: float = 0.95,
             train: Dataset | None = None) -> EstimateReport:
    return Session(data, problem, J, seed, level, train).run(estimator)
