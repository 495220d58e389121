"""Hessian Riesz representers by closed-form quadratic minimisation.

For a basis (b_1..b_p) the empirical Riesz risk
    P_n[alpha^T H alpha] - 2 P_n[m_dot(alpha)]
is the quadratic c^T A c - 2 b^T c, so the minimiser solves A c = b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import FittedFunction, Function, FunctionSpace
from .data import CrossFitPlan, Dataset
from .errors import AutoDMLError, ConfigError
from .fit import block_hessian, solve_psd
from .functional import FunctionalSpec
from .loss import LossSpec

RIDGE_GRID = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


@dataclass(frozen=True, eq=False)
class RieszSystem:
    A: np.ndarray
    b: np.ndarray
    space: FunctionSpace
    n: int

    @property
    def p(self) -> int:
        return self.space.p


def assemble_riesz_system(loss: LossSpec, theta: Function, func: FunctionalSpec, space: FunctionSpace,
                          data: Dataset, rows=None) -> RieszSystem:
    """A = P_n[B^T H_theta B], b = P_n[m_dot_theta(., b_j)] over ``rows``."""
    H = loss.evaluate(theta, data, rows).hess
    designs = space.design(data, rows)
    m = designs[0].shape[0]
    A = block_hessian(space, designs, H) / m
    b = func.derivative_design(theta, space, data, rows).sum(axis=0) / m
    return RieszSystem(A, b, space, m)


def fit_riesz(system: RieszSystem, ridge: float = 0.0) -> FittedFunction:
    if ridge < 0:
        raise ConfigError("ridge must be >= 0")
    c = solve_psd(system.A + ridge * np.eye(system.p), system.b)
    return FittedFunction.from_vector(system.space, c, {"ridge": float(ridge), "n_rows": system.n})


def riesz_pointwise_risk(loss: LossSpec, theta: Function, func: FunctionalSpec, alpha: Function,
                         data: Dataset, rows=None) -> np.ndarray:
    """alpha^T H alpha - 2 m_dot(alpha) for each row."""
    H = loss.evaluate(theta, data, rows).hess
    a = alpha.values(data, rows)
    quad = np.einsum("ij,ijk,ik->i", a, H, a)
    return quad - 2.0 * func.derivative(theta, alpha, data, rows)


def normal_equation_residual(loss: LossSpec, theta: Function, func: FunctionalSpec, alpha: FittedFunction,
                             data: Dataset, rows=None) -> np.ndarray:
    """P_n[b_j^T H alpha] - P_n[m_dot(b_j)] for every basis function b_j of alpha's space."""
    system = assemble_riesz_system(loss, theta, func, alpha.space, data, rows)
    return system.A @ alpha.vector - system.b


def select_riesz_ridge(loss: LossSpec, theta: Function, func: FunctionalSpec, space: FunctionSpace,
                       data: Dataset, plan: CrossFitPlan, grid=RIDGE_GRID) -> tuple:
    """Cross-validated ridge for the Riesz fit; ties go to the largest value.

    Returns (ridge, per-ridge CV risks).
    """
    systems = [assemble_riesz_system(loss, theta, func, space, data, plan.train(j)) for j in range(plan.J)]
    risks = []
    for lam in grid:
        total = 0.0
        try:
            for j, system in enumerate(systems):
                alpha = fit_riesz(system, lam)
                total += float(np.sum(riesz_pointwise_risk(loss, theta, func, alpha, data, plan.fold(j))))
            risks.append(total / plan.n)
        except AutoDMLError:
            risks.append(np.inf)
    r = np.asarray(risks)
    if not np.isfinite(r).any():
        return float(grid[-1]), tuple(risks)
    best = r[np.isfinite(r)].min()
    idx = max(i for i in range(len(grid)) if r[i] == best)
    return float(grid[idx]), tuple(risks)
