"""Empirical risk minimisation over a function space and CV sieve selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .basis import FittedFunction, FunctionSpace, SieveConfig, nested_sieve
from .data import CrossFitPlan, Dataset
from .errors import AutoDMLError, ConfigError, DimensionMismatch, NewtonDivergence, NumericRange, SingularSystem
from .loss import LossSpec

JITTER = 1e-8


@dataclass(frozen=True)
class FitConfig:
    ridge: float = 0.0
    max_iters: int = 100
    grad_tol: float = 1e-10
    max_backtracks: int = 50

    def __post_init__(self):
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")
        if self.max_iters < 1 or self.grad_tol <= 0 or self.max_backtracks < 1:
            raise ConfigError("Newton settings must be strictly positive")


def solve_psd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric A by Cholesky, with one jittered retry.

    The jitter adds 1e-8 * trace(A) / p to the diagonal.
    """
    A = 0.5 * (A + A.T)
    try:
        return linalg.cho_solve(linalg.cho_factor(A, check_finite=True), b)
    except (linalg.LinAlgError, ValueError):
        pass
    p = A.shape[0]
    delta = JITTER * max(np.trace(A), 0.0) / p
    if not np.isfinite(delta) or delta <= 0:
        delta = JITTER
    try:
        return linalg.cho_solve(linalg.cho_factor(A + delta * np.eye(p)), b)
    except (linalg.LinAlgError, ValueError):
        raise SingularSystem(f"{p}x{p} system not positive definite after jitter {delta:.3g}") from None


def newton_direction(A: np.ndarray, g: np.ndarray) -> tuple:
    """Solve A d = g, shifting an indefinite A by its most negative eigenvalue.

    Returns (d, shift).  Positive definite systems go through :func:`solve_psd`
    unchanged; otherwise A + tau I with tau = -lambda_min + 1e-8 * max(1, |lambda|_max)
    gives a descent direction for non-convex risks.
    """
    try:
        return solve_psd(A, g), 0.0
    except SingularSystem:
        pass
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    if not np.all(np.isfinite(w)):
        raise SingularSystem("non-finite Hessian")
    tau = -w[0] + JITTER * max(1.0, float(np.max(np.abs(w))))
    return solve_psd(A + tau * np.eye(A.shape[0]), g), float(tau)


def block_gradient(space: FunctionSpace, designs: list, g: np.ndarray) -> np.ndarray:
    """sum_i B_i^T g_i for block-diagonal row designs (unnormalised)."""
    return np.concatenate([designs[b].T @ g[:, b] for b in range(space.d1)])


def block_hessian(space: FunctionSpace, designs: list, H: np.ndarray) -> np.ndarray:
    """sum_i B_i^T H_i B_i (unnormalised)."""
    off = space.offsets
    A = np.empty((space.p, space.p))
    for b1 in range(space.d1):
        for b2 in range(b1, space.d1):
            blk = designs[b1].T @ (H[:, b1, b2][:, None] * designs[b2])
            A[off[b1]:off[b1 + 1], off[b2]:off[b2 + 1]] = blk
            if b2 != b1:
                A[off[b2]:off[b2 + 1], off[b1]:off[b1 + 1]] = blk.T
    return A


def _theta_values(designs: list, coefs: tuple) -> np.ndarray:
    return np.column_stack([B @ c for B, c in zip(designs, coefs)])


def empirical_risk(loss: LossSpec, theta, data: Dataset, rows=None) -> float:
    return float(np.mean(loss.evaluate(theta, data, rows).value))


def fit_erm(loss: LossSpec, space: FunctionSpace, data: Dataset, rows=None,
            cfg: FitConfig | None = None) -> FittedFunction:
    """Minimise mean loss + (ridge / 2) ||c||^2 over coefficients c.

    Quadratic losses take a single exact Newton step from zero; everything else
    runs damped Newton with Armijo backtracking, shifting the Hessian when the
    risk is locally non-convex.  ``info`` records the final
    gradient norm and iteration count.
    """
    cfg = cfg or FitConfig()
    if space.d1 != loss.d1:
        raise DimensionMismatch(f"space d1={space.d1} does not match loss d1={loss.d1}")
    designs = space.design(data, rows)
    m = designs[0].shape[0]
    if m == 0:
        raise ConfigError("cannot fit on an empty row set")
    lam = cfg.ridge
    eye = np.eye(space.p)

    def state(c):
        th = _theta_values(designs, space.split(c))
        pl = loss.pointwise(th, data, rows)
        val = float(np.mean(pl.value)) + 0.5 * lam * float(c @ c)
        grad = block_gradient(space, designs, pl.grad) / m + lam * c
        return val, grad, pl

    def objective(c):
        try:
            th = _theta_values(designs, space.split(c))
            v = float(np.mean(loss.pointwise(th, data, rows).value)) + 0.5 * lam * float(c @ c)
        except NumericRange:
            return np.inf
        return v if np.isfinite(v) else np.inf

    c = np.zeros(space.p)
    val, grad, pl = state(c)
    iters = 0
    shifted = 0
    if loss.is_quadratic:
        A = block_hessian(space, designs, pl.hess) / m + lam * eye
        c = -solve_psd(A, grad)
        val, grad, pl = state(c)
        iters = 1
    else:
        while np.linalg.norm(grad) > cfg.grad_tol:
            if iters >= cfg.max_iters:
                raise NewtonDivergence(
                    f"no convergence in {cfg.max_iters} iterations (grad norm {np.linalg.norm(grad):.3g})")
            A = block_hessian(space, designs, pl.hess) / m + lam * eye
            step, shift = newton_direction(A, grad)
            shifted += shift > 0
            slope = float(grad @ step)
            t = 1.0
            accepted = False
            for _ in range(cfg.max_backtracks):
                trial = objective(c - t * step)
                if trial <= val - 1e-4 * t * slope or (t == 1.0 and trial <= val + 1e-15 * abs(val)):
                    accepted = True
                    break
                t *= 0.5
            iters += 1
            if not accepted:
                # round-off floor: accept only if already essentially stationary
                if np.linalg.norm(grad) > 1e-6:
                    raise NewtonDivergence(f"line search failed at grad norm {np.linalg.norm(grad):.3g}")
                break
            c = c - t * step
            val, grad, pl = state(c)
        if np.linalg.norm(grad) > cfg.grad_tol and iters >= cfg.max_iters:
            raise NewtonDivergence(f"gradient norm {np.linalg.norm(grad):.3g} above tolerance")
    info = {"grad_norm": float(np.linalg.norm(grad)), "iterations": iters, "ridge": lam,
            "risk": val, "n_rows": m, "shifted_steps": shifted}
    if not np.all(np.isfinite(c)):
        raise NewtonDivergence("non-finite coefficients")
    return FittedFunction.from_vector(space, c, info)


@dataclass(frozen=True)
class CVResult:
    k_selected: int
    risks: tuple
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"k_selected": self.k_selected, "risks": [float(r) for r in self.risks],
                "errors": {str(k): v for k, v in self.errors.items()}}


def select_smallest_argmin(risks) -> int:
    """1-based index of the first minimiser; non-finite entries are ineligible."""
    r = np.asarray(risks, dtype=float)
    ok = np.isfinite(r)
    if not ok.any():
        raise SingularSystem("no sieve level could be fitted")
    best = r[ok].min()
    return int(np.flatnonzero(ok & (r == best))[0]) + 1


def cv_loop(k_max: int, plan: CrossFitPlan,
            fold_risk: Callable[[int, int], np.ndarray]) -> CVResult:
    """Pooled out-of-fold risk per k.

    ``fold_risk(k, j)`` returns the held-out pointwise risks on fold ``j`` of a
    fit at level ``k`` trained on the other folds.
    """
    if k_max < 1:
        raise ConfigError("k_max must be >= 1")
    risks, errors = [], {}
    for k in range(1, k_max + 1):
        total = 0.0
        try:
            for j in range(plan.J):
                total += float(np.sum(fold_risk(k, j)))
            risks.append(total / plan.n)
        except AutoDMLError as exc:
            errors[k] = f"{exc.code}: {exc}"
            risks.append(np.inf)
    return CVResult(select_smallest_argmin(risks), tuple(risks), errors)


def cross_validate(loss: LossSpec, sieve: SieveConfig, k_max: int, data: Dataset, plan: CrossFitPlan,
                   cfg: FitConfig | None = None) -> CVResult:
    """Choose the sieve level minimising cross-validated risk; ties go to the smallest k."""

    def fold_risk(k, j):
        f = fit_erm(loss, nested_sieve(sieve, k), data, plan.train(j), cfg)
        return loss.evaluate(f, data, plan.fold(j)).value

    return cv_loop(k_max, plan, fold_risk)
