"""Target functionals m(z, theta) and their directional derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .basis import Function, FunctionSpace
from .errors import ConfigError, DimensionMismatch, NotPointwise
from .loss import bg_terms

FUNCTIONAL_KINDS = ("mean_of_theta", "ate_contrast", "bg_survival", "linear_custom")


@dataclass(frozen=True)
class FunctionalSpec:
    """A smooth functional of theta, averaged over observations.

    ``mean_of_theta``: m = theta(z)[block].
    ``ate_contrast``: m = theta(1, x) - theta(0, x) when ``treatment`` names the
    column to toggle; with ``treatment=None`` theta is already the contrast
    (a CATE) and m = theta(x).
    ``bg_survival``: m = P(T > t0 | a(x), b(x)) for d1 = 2 theta = (a, b).
    ``linear_custom``: m = sum_k coef_k * theta(z with overrides_k)[block_k];
    ``terms`` holds (coef, overrides) or (coef, overrides, block) tuples.
    """

    kind: str
    t0: int | None = None
    treatment: str | None = None
    terms: tuple = ()
    block: int = 0

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ConfigError(f"unknown functional kind {self.kind!r}")
        if self.kind == "bg_survival" and (self.t0 is None or int(self.t0) < 1):
            raise ConfigError("bg_survival needs a horizon t0 >= 1")
        if self.kind == "linear_custom" and not self.terms:
            raise ConfigError("linear_custom needs at least one term")
        norm = []
        for t in self.terms:
            coef, over = t[0], dict(t[1] or {})
            norm.append((float(coef), over, int(t[2]) if len(t) > 2 else self.block))
        object.__setattr__(self, "terms", tuple(norm))

    @property
    def is_linear(self) -> bool:
        return self.kind != "bg_survival"

    @property
    def required_d1(self) -> int | None:
        return 2 if self.kind == "bg_survival" else None

    def linear_terms(self) -> tuple:
        """(coef, overrides, block) triples for linear kinds."""
        if self.kind == "mean_of_theta" or (self.kind == "ate_contrast" and self.treatment is None):
            return ((1.0, {}, self.block),)
        if self.kind == "ate_contrast":
            return ((1.0, {self.treatment: 1.0}, self.block), (-1.0, {self.treatment: 0.0}, self.block))
        if self.kind == "linear_custom":
            return self.terms
        raise NotPointwise(f"{self.kind} is not linear")

    def _check(self, theta: Function):
        need = self.required_d1
        if need is not None and theta.d1 != need:
            raise DimensionMismatch(f"{self.kind} needs d1={need}, got {theta.d1}")
        if self.is_linear:
            for _, _, b in self.linear_terms():
                if b >= theta.d1:
                    raise DimensionMismatch(f"block {b} out of range for d1={theta.d1}")

    # -- vectorised evaluation over rows ----------------------------------

    def values(self, theta: Function, data, rows=None) -> np.ndarray:
        """m(z_i, theta) for each selected row."""
        self._check(theta)
        if self.kind == "bg_survival":
            ab = theta.values(data, rows)
            return np.exp(bg_terms(ab[:, 0], ab[:, 1], int(self.t0)).log_surv)
        out = None
        for coef, over, b in self.linear_terms():
            v = coef * theta.values(data, rows, over or None)[:, b]
            out = v if out is None else out + v
        return out

    def derivative(self, theta: Function, h: Function, data, rows=None) -> np.ndarray:
        """Directional derivative m_dot_theta(z_i, h) for each selected row."""
        if h.d1 != theta.d1:
            raise DimensionMismatch(f"direction d1={h.d1} differs from theta d1={theta.d1}")
        if self.is_linear:
            self._check(h)
            return self.values(h, data, rows)
        v = self.pointwise_vector(theta, data, rows)
        return np.einsum("ij,ij->i", v, h.values(data, rows))

    def pointwise_vector(self, theta: Function, data, rows=None) -> np.ndarray:
        """v(z) with m_dot_theta(z, h) = v(z)^T h(z), shape (m, d1).

        Exists only when m evaluates theta at the observed z (no overrides).
        """
        self._check(theta)
        if self.kind == "bg_survival":
            ab = theta.values(data, rows)
            r = bg_terms(ab[:, 0], ab[:, 1], int(self.t0))
            return np.exp(r.log_surv)[:, None] * r.grad_surv
        terms = self.linear_terms()
        if any(over for _, over, _ in terms):
            raise NotPointwise(f"{self.kind} evaluates theta at counterfactual inputs")
        m = theta.values(data, rows).shape[0]
        v = np.zeros((m, theta.d1))
        for coef, _, b in terms:
            v[:, b] += coef
        return v

    def derivative_design(self, theta: Function, space: FunctionSpace, data, rows=None) -> np.ndarray:
        """(m, p) matrix whose column j is m_dot_theta(z_i, b_j) for basis function b_j."""
        if space.d1 != theta.d1:
            raise DimensionMismatch(f"space d1={space.d1} differs from theta d1={theta.d1}")
        off = space.offsets
        if not self.is_linear:
            v = self.pointwise_vector(theta, data, rows)
            designs = space.design(data, rows)
            return np.hstack([v[:, [b]] * designs[b] for b in range(space.d1)])
        self._check(theta)
        out = None
        for coef, over, b in self.linear_terms():
            Bb = space.design(data, rows, over or None)[b]
            if out is None:
                out = np.zeros((Bb.shape[0], space.p))
            out[:, off[b]:off[b + 1]] += coef * Bb
        return out

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.t0 is not None:
            d["t0"] = int(self.t0)
        if self.treatment is not None:
            d["treatment"] = self.treatment
        if self.kind == "linear_custom":
            d["terms"] = [[c, o, b] for c, o, b in self.terms]
        return d


def functional_value(f: FunctionalSpec, theta: Function, z: Mapping[str, float]) -> float:
    return float(f.values(theta, z)[0])


def functional_derivative(f: FunctionalSpec, theta: Function, z: Mapping[str, float], h: Function) -> float:
    return float(f.derivative(theta, h, z)[0])
