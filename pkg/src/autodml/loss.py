"""Pointwise losses with hand-coded gradients and Hessians.

A loss of the form ``l(z, theta(z))`` is described by three per-row arrays:
its value, the gradient vector ``g(z)`` and the Hessian matrix ``H(z)`` with
respect to the d1 outputs of ``theta``.  The directional derivatives then
follow as ``g(z)^T h(z)`` and ``h1(z)^T H(z) h2(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
from scipy.special import expit

from .basis import Function
from .data import Dataset
from .errors import DimensionMismatch, DomainError, MissingNuisance, NumericRange, ConfigError

BG_MAX_ABS = 30.0
MU_CLAMP = 1e-6

LOSS_KINDS = (
    "squared_error", "logistic", "pseudo_outcome", "rlearner", "drlearner",
    "riesz_quadratic", "ortho_logistic", "beta_geometric_nll",
)

_REQUIRED = {
    "pseudo_outcome": ("w", "zeta"),
    "rlearner": ("pi", "m"),
    "drlearner": ("pi", "mu"),
    "ortho_logistic": ("pi", "mu"),
}

QUADRATIC_KINDS = frozenset({"squared_error", "pseudo_outcome", "rlearner", "drlearner", "riesz_quadratic"})


# ---------------------------------------------------------------------------
# beta-geometric recursions


class BGTerms(NamedTuple):
    log_event: np.ndarray  # log P(T = t)
    log_surv: np.ndarray  # log P(T > t)
    grad_event: np.ndarray  # (m, 2): d/d(a, b)
    grad_surv: np.ndarray
    hess_event: np.ndarray  # (m, 2, 2)
    hess_surv: np.ndarray


def _check_range(a, b):
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericRange("non-finite beta-geometric shape parameter")
    if np.any(np.abs(a) > BG_MAX_ABS) or np.any(np.abs(b) > BG_MAX_ABS):
        raise NumericRange(f"|a| or |b| exceeds {BG_MAX_ABS:g}")


def bg_terms(a, b, t) -> BGTerms:
    """Log event/survival probabilities and their (a, b) derivatives.

    Forward recursion over s = 1..t with hazard
    lambda(s) = e^a / (e^a + e^b + s - 1):
    log P(T > t) = sum_{s<=t} log(1 - lambda(s)) and
    log P(T = t) = log P(T > t - 1) + log lambda(t).
    Each step adds closed-form first and second derivatives of its log factor.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    t = np.atleast_1d(np.asarray(t)).astype(np.int64)
    a, b, t = np.broadcast_arrays(a, b, t)
    _check_range(a, b)
    if np.any(t < 1):
        raise NumericRange("event times must be >= 1")
    m = a.shape[0]
    al, be = np.exp(a), np.exp(b)

    acc_v = np.zeros(m)
    acc_g = np.zeros((m, 2))
    acc_h = np.zeros((m, 2, 2))
    out = BGTerms(np.empty(m), np.empty(m), np.empty((m, 2)), np.empty((m, 2)),
                  np.empty((m, 2, 2)), np.empty((m, 2, 2)))
    for s in range(1, int(t.max()) + 1):
        D = al + be + (s - 1)
        B = be + (s - 1)
        logD = np.log(D)
        D2 = D * D
        hit = t == s
        if hit.any():
            # hazard factor log lambda(s) = a - log D
            lv = a - logD
            lg = np.stack([1.0 - al / D, -be / D], axis=1)
            hab = al * be / D2
            lh = np.empty((m, 2, 2))
            lh[:, 0, 0] = -al * B / D2
            lh[:, 0, 1] = lh[:, 1, 0] = hab
            lh[:, 1, 1] = -be * (al + (s - 1)) / D2
            out.log_event[hit] = (acc_v + lv)[hit]
            out.grad_event[hit] = (acc_g + lg)[hit]
            out.hess_event[hit] = (acc_h + lh)[hit]
        # survival factor log(1 - lambda(s)) = log B - log D
        sv = np.log(B) - logD
        sg = np.stack([-al / D, be / B - be / D], axis=1)
        sh = np.empty((m, 2, 2))
        sh[:, 0, 0] = -al * B / D2
        sh[:, 0, 1] = sh[:, 1, 0] = al * be / D2
        sh[:, 1, 1] = be * (s - 1) / (B * B) - be * (al + (s - 1)) / D2
        acc_v = acc_v + sv
        acc_g = acc_g + sg
        acc_h = acc_h + sh
        if hit.any():
            out.log_surv[hit] = acc_v[hit]
            out.grad_surv[hit] = acc_g[hit]
            out.hess_surv[hit] = acc_h[hit]
    return out


def bg_log_derivatives(a_val: float, b_val: float, t: int) -> dict:
    """Scalar view of :func:`bg_terms` for a single (a, b, t)."""
    if t < 1:
        raise NumericRange("t must be >= 1")
    r = bg_terms(a_val, b_val, t)
    return {
        "log_event": float(r.log_event[0]),
        "log_surv": float(r.log_surv[0]),
        "grad_event": r.grad_event[0].copy(),
        "grad_surv": r.grad_surv[0].copy(),
        "hess_event": r.hess_event[0].copy(),
        "hess_surv": r.hess_surv[0].copy(),
    }


def bg_hazard(a, b, s):
    al, be = np.exp(a), np.exp(b)
    return al / (al + be + s - 1)


# ---------------------------------------------------------------------------
# loss specification


class PointwiseLoss(NamedTuple):
    value: np.ndarray  # (m,)
    grad: np.ndarray  # (m, d1)
    hess: np.ndarray  # (m, d1, d1)


@dataclass(frozen=True, eq=False)
class LossSpec:
    """A loss kind with its nuisances bound.

    ``nuisances`` maps names to evaluable functions (``pi``, ``m``, ``mu``,
    ``w``, ``zeta`` depending on the kind).  ``params`` holds kind-specific
    settings: ``target`` (column fitted by squared_error/logistic, default the
    outcome role) and, for ``riesz_quadratic``, ``base`` (LossSpec), ``theta``
    and ``functional``.
    """

    kind: str
    nuisances: Mapping[str, Function] = field(default_factory=dict)
    d1: int = 1
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == "beta_geometric_nll" and self.d1 != 2:
            object.__setattr__(self, "d1", 2)
        if self.kind == "riesz_quadratic":
            base = self.params.get("base")
            if base is None or "theta" not in self.params or "functional" not in self.params:
                raise MissingNuisance("riesz_quadratic needs base, theta and functional")
            object.__setattr__(self, "d1", base.d1)

    @property
    def is_quadratic(self) -> bool:
        return self.kind in QUADRATIC_KINDS

    def with_nuisances(self, nuisances: Mapping[str, Function]) -> "LossSpec":
        return LossSpec(self.kind, dict(nuisances), self.d1, self.params)

    def _nuis(self, name, data, rows, overrides=None) -> np.ndarray:
        try:
            f = self.nuisances[name]
        except KeyError:
            raise MissingNuisance(f"loss {self.kind!r} needs nuisance {name!r}") from None
        return f.values(data, rows, overrides)[:, 0]

    def pointwise(self, theta_vals: np.ndarray, data: Dataset, rows=None) -> PointwiseLoss:
        """Value, gradient and Hessian at the per-row outputs ``theta_vals``."""
        th = np.asarray(theta_vals, dtype=float)
        if th.ndim == 1:
            th = th[:, None]
        if th.shape[1] != self.d1:
            raise DimensionMismatch(f"loss {self.kind!r} expects d1={self.d1}, got {th.shape[1]}")
        for name in _REQUIRED.get(self.kind, ()):
            if name not in self.nuisances:
                raise MissingNuisance(f"loss {self.kind!r} needs nuisance {name!r}")
        return getattr(self, "_" + self.kind)(th, data, rows)

    def evaluate(self, theta: Function, data: Dataset, rows=None) -> PointwiseLoss:
        return self.pointwise(theta.values(data, rows), data, rows)

    # -- individual kinds ---------------------------------------------------

    def _target(self, data, rows):
        name = self.params.get("target") or data.role("outcome")
        col = data[name]
        return col if rows is None else col[rows]

    def _squared_error(self, th, data, rows):
        y = self._target(data, rows)
        r = th[:, 0] - y
        return PointwiseLoss(0.5 * r * r, r[:, None], np.ones((len(r), 1, 1)))

    def _logistic(self, th, data, rows):
        y = self._target(data, rows)
        u = th[:, 0]
        p = expit(u)
        return PointwiseLoss(np.logaddexp(0.0, u) - y * u, (p - y)[:, None], (p * (1 - p))[:, None, None])

    def _weighted_quadratic(self, th, w, zeta):
        r = th[:, 0] - zeta
        return PointwiseLoss(0.5 * w * r * r, (w * r)[:, None], w[:, None, None].copy())

    def _pseudo_outcome(self, th, data, rows):
        w = self._nuis("w", data, rows)
        if np.any(w < 0):
            raise DomainError("pseudo-weights must be non-negative")
        return self._weighted_quadratic(th, w, self._nuis("zeta", data, rows))

    def _treatment(self, data, rows):
        col = data.get_role("treatment")
        return col if rows is None else col[rows]

    def _outcome(self, data, rows):
        col = data.get_role("outcome")
        return col if rows is None else col[rows]

    def _rlearner(self, th, data, rows):
        # 0.5 (a - pi)^2 {(y - m)/(a - pi) - theta}^2 written without the division
        a, y = self._treatment(data, rows), self._outcome(data, rows)
        d = a - self._nuis("pi", data, rows)
        r = y - self._nuis("m", data, rows) - d * th[:, 0]
        return PointwiseLoss(0.5 * r * r, (-d * r)[:, None], (d * d)[:, None, None])

    def _drlearner(self, th, data, rows):
        a, y = self._treatment(data, rows), self._outcome(data, rows)
        tcol = data.role("treatment")
        pi = self._nuis("pi", data, rows)
        if np.any((pi <= 0) | (pi >= 1)):
            raise DomainError("propensity must lie strictly inside (0, 1)")
        mu1 = self._nuis("mu", data, rows, {tcol: 1.0})
        mu0 = self._nuis("mu", data, rows, {tcol: 0.0})
        mua = np.where(a == 1, mu1, mu0)
        zeta = mu1 - mu0 + (a - pi) / (pi * (1 - pi)) * (y - mua)
        return self._weighted_quadratic(th, np.ones_like(zeta), zeta)

    def _ortho_logistic(self, th, data, rows):
        a, y = self._treatment(data, rows), self._outcome(data, rows)
        tcol = data.role("treatment")
        pi = self._nuis("pi", data, rows)
        mus = []
        for v in (1.0, 0.0):
            mu = self._nuis("mu", data, rows, {tcol: v})
            if np.any(~np.isfinite(mu)) or np.any((mu < 0) | (mu > 1)):
                raise DomainError("outcome regression must lie in [0, 1] for ortho_logistic")
            mus.append(np.clip(mu, MU_CLAMP, 1 - MU_CLAMP))
        mu1, mu0 = mus
        mua = np.where(a == 1, mu1, mu0)
        nu = mua * (1 - mua)
        offset = pi * np.log(mu1 / (1 - mu1)) + (1 - pi) * np.log(mu0 / (1 - mu0))
        d = a - pi
        u = d * th[:, 0] + offset
        p = expit(u)
        value = (np.logaddexp(0.0, u) - y * d * th[:, 0]) / nu
        grad = d * (p - y) / nu
        hess = d * d * p * (1 - p) / nu
        return PointwiseLoss(value, grad[:, None], hess[:, None, None])

    def _beta_geometric_nll(self, th, data, rows):
        t = data.get_role("time")
        delta = data.get_role("event")
        if rows is not None:
            t, delta = t[rows], delta[rows]
        r = bg_terms(th[:, 0], th[:, 1], t)
        ev = delta == 1
        value = -np.where(ev, r.log_event, r.log_surv)
        grad = -np.where(ev[:, None], r.grad_event, r.grad_surv)
        hess = -np.where(ev[:, None, None], r.hess_event, r.hess_surv)
        return PointwiseLoss(value, grad, hess)

    def _riesz_quadratic(self, th, data, rows):
        # 0.5 alpha^T H_theta alpha - v^T alpha: half the Riesz loss, same minimiser
        base, theta, func = self.params["base"], self.params["theta"], self.params["functional"]
        H = base.evaluate(theta, data, rows).hess
        v = func.pointwise_vector(theta, data, rows)
        Ha = np.einsum("ijk,ik->ij", H, th)
        value = 0.5 * np.einsum("ij,ij->i", th, Ha) - np.einsum("ij,ij->i", v, th)
        return PointwiseLoss(value, Ha - v, H)


# ---------------------------------------------------------------------------
# FittedFunction-level convenience wrappers


def loss_value(loss: LossSpec, theta: Function, z) -> float:
    data, rows = _single(z)
    return float(loss.pointwise(theta.values(data, rows), data, rows).value[0])


def loss_gradient(loss: LossSpec, theta: Function, z) -> np.ndarray:
    data, rows = _single(z)
    return loss.pointwise(theta.values(data, rows), data, rows).grad[0]


def loss_hessian(loss: LossSpec, theta: Function, z) -> np.ndarray:
    data, rows = _single(z)
    return loss.pointwise(theta.values(data, rows), data, rows).hess[0]


def _single(z):
    if isinstance(z, tuple) and len(z) == 2 and isinstance(z[0], Dataset):
        return z[0], np.atleast_1d(z[1])
    if isinstance(z, Dataset):
        return z, None
    raise TypeError("pass a Dataset (optionally with a row index as (data, i))")
