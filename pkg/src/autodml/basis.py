"""Finite-dimensional function spaces, nested sieves and fitted functions.

A :class:`FunctionSpace` has one block of basis features per output
dimension.  Fitted functions are immutable trees: a leaf holds coefficients on
a space, an inner node holds weighted children, so ``combine(f, w, g)``
evaluates to exactly ``f(z) + w * g(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import DimensionMismatch, MissingCovariate, UnsupportedFamily

FAMILIES = ("constant", "polynomial", "piecewise_linear")


@dataclass(frozen=True)
class Factor:
    """One multiplicative piece of a basis feature.

    ``power``: ((2x - lo - hi) / (hi - lo)) ** degree, i.e. x rescaled to [-1, 1].
    ``hinge``: max(x - knot, 0).
    ``indicator``: 1 if x == value else 0.
    """

    column: str
    kind: str
    degree: int = 1
    knot: float = 0.0
    lo: float = -1.0
    hi: float = 1.0
    value: float = 1.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            if self.lo == -1.0 and self.hi == 1.0:
                u = x
            else:
                u = (2.0 * x - self.lo - self.hi) / (self.hi - self.lo)
            return u**self.degree
        if self.kind == "hinge":
            return np.maximum(x - self.knot, 0.0)
        if self.kind == "indicator":
            return (x == self.value).astype(float)
        raise UnsupportedFamily(f"unknown factor kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "power":
            return self.column if self.degree == 1 else f"{self.column}^{self.degree}"
        if self.kind == "hinge":
            return f"({self.column}-{self.knot:g})_+"
        return f"[{self.column}={self.value:g}]"


@dataclass(frozen=True)
class Feature:
    factors: tuple = ()

    def __call__(self, cols: Mapping[str, np.ndarray], m: int) -> np.ndarray:
        out = np.ones(m)
        for f in self.factors:
            try:
                x = cols[f.column]
            except KeyError:
                raise MissingCovariate(f"covariate {f.column!r} required by basis") from None
            out = out * f(np.asarray(x, dtype=float))
        return out

    @property
    def name(self) -> str:
        return "*".join(f.name for f in self.factors) or "1"

    def times(self, other: "Feature") -> "Feature":
        return Feature(self.factors + other.factors)


CONSTANT = Feature()


@dataclass(frozen=True, eq=False)
class CallableFeature:
    """A feature given by a vectorised function of the columns (e.g. a / pi(x))."""

    fn: object
    label: str = "f"
    factors: tuple = ()

    def __call__(self, cols: Mapping[str, np.ndarray], m: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.fn(cols), dtype=float), (m,)).copy()

    @property
    def name(self) -> str:
        return self.label


def power(col: str, degree: int = 1, lo: float = -1.0, hi: float = 1.0) -> Feature:
    return Feature((Factor(col, "power", degree=degree, lo=lo, hi=hi),))


def hinge(col: str, knot: float) -> Feature:
    return Feature((Factor(col, "hinge", knot=knot),))


def indicator(col: str, value: float = 1.0) -> Feature:
    return Feature((Factor(col, "indicator", value=value),))


def _as_columns(data, rows=None, overrides=None):
    """Normalise a Dataset / column mapping / single observation into arrays."""
    if isinstance(data, Dataset):
        cols = data.view(rows, overrides)
        return cols, len(next(iter(cols.values())))
    cols = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in data.items()}
    m = max((len(v) for v in cols.values()), default=1)
    if rows is not None:
        cols = {k: (v[rows] if len(v) == m else v) for k, v in cols.items()}
        m = len(np.arange(m)[rows])
    cols = {k: (np.broadcast_to(v, (m,)) if len(v) == 1 else v) for k, v in cols.items()}
    for k, v in (overrides or {}).items():
        cols[k] = np.full(m, float(v))
    return cols, m


@dataclass(frozen=True)
class FunctionSpace:
    """Block-structured linear span: block ``b`` spans ``blocks[b]``."""

    blocks: tuple
    family: str = "custom"
    additive: bool = True

    def __post_init__(self):
        blocks = tuple(tuple(b) for b in self.blocks)
        if not blocks or any(len(b) == 0 for b in blocks):
            raise UnsupportedFamily("every block needs at least one basis function")
        object.__setattr__(self, "blocks", blocks)

    @property
    def d1(self) -> int:
        return len(self.blocks)

    @property
    def dims(self) -> tuple:
        return tuple(len(b) for b in self.blocks)

    @property
    def p(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    @property
    def columns_used(self) -> frozenset:
        return frozenset(f.column for b in self.blocks for feat in b for f in feat.factors)

    def design(self, data, rows=None, overrides=None) -> list:
        """Per-block design matrices, each of shape (m, dims[b])."""
        cols, m = _as_columns(data, rows, overrides)
        return [np.column_stack([feat(cols, m) for feat in block]) for block in self.blocks]

    def names(self) -> list:
        return [[feat.name for feat in block] for block in self.blocks]

    def split(self, coef: np.ndarray) -> tuple:
        off = self.offsets
        coef = np.asarray(coef, dtype=float)
        return tuple(coef[off[b]:off[b + 1]] for b in range(self.d1))

    @classmethod
    def single(cls, features: Sequence[Feature], d1: int = 1, family: str = "custom",
               additive: bool = True) -> "FunctionSpace":
        return cls(tuple(tuple(features) for _ in range(d1)), family, additive)


def evaluate_basis(space: FunctionSpace, z: Mapping[str, float]) -> list:
    """Design vectors of one observation, one per output block."""
    return [row[0] for row in space.design(z)]


class Function:
    """Anything evaluable to an (m, d1) array on rows of a dataset."""

    d1: int = 1

    def values(self, data, rows=None, overrides=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, z: Mapping[str, float]) -> np.ndarray:
        return self.values(z)[0]


@dataclass(frozen=True, eq=False)
class FittedFunction(Function):
    """Leaf (``space`` + per-block ``coefs``) or weighted sum of ``terms``."""

    space: FunctionSpace | None = None
    coefs: tuple = ()
    terms: tuple = ()
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.space is not None:
            coefs = tuple(np.asarray(c, dtype=float).reshape(-1) for c in self.coefs)
            if tuple(len(c) for c in coefs) != self.space.dims:
                raise DimensionMismatch(f"coefficient sizes {[len(c) for c in coefs]} != dims {self.space.dims}")
            object.__setattr__(self, "coefs", coefs)
        elif not self.terms:
            raise DimensionMismatch("fitted function needs a space or terms")
        else:
            d = {t[1].d1 for t in self.terms}
            if len(d) != 1:
                raise DimensionMismatch("terms disagree on output dimension")

    @property
    def d1(self) -> int:
        return self.space.d1 if self.space is not None else self.terms[0][1].d1

    @classmethod
    def from_vector(cls, space: FunctionSpace, coef, info=None) -> "FittedFunction":
        return cls(space, space.split(coef), info=dict(info or {}))

    @classmethod
    def zero(cls, space: FunctionSpace) -> "FittedFunction":
        return cls.from_vector(space, np.zeros(space.p))

    @property
    def vector(self) -> np.ndarray:
        if self.space is None:
            raise DimensionMismatch("only leaf functions have a coefficient vector")
        return np.concatenate(self.coefs)

    def values(self, data, rows=None, overrides=None) -> np.ndarray:
        if self.space is not None:
            designs = self.space.design(data, rows, overrides)
            return np.column_stack([B @ c for B, c in zip(designs, self.coefs)])
        out = None
        for w, child in self.terms:
            v = child.values(data, rows, overrides)
            out = v if (out is None and w == 1.0) else (w * v if out is None else out + w * v)
        return out

    def to_dict(self) -> dict:
        if self.space is not None:
            return {
                "family": self.space.family,
                "basis": self.space.names(),
                "coefficients": [c.tolist() for c in self.coefs],
            }
        return {"terms": [{"weight": w, "function": _to_dict(f)} for w, f in self.terms]}


def _to_dict(f) -> dict:
    return f.to_dict() if hasattr(f, "to_dict") else {"function": type(f).__name__}


@dataclass(frozen=True, eq=False)
class KnownFunction(Function):
    """Wraps a vectorised callable ``fn(cols) -> array``; used for oracle injection."""

    fn: object
    d1: int = 1
    label: str = "known"

    def values(self, data, rows=None, overrides=None) -> np.ndarray:
        cols, m = _as_columns(data, rows, overrides)
        v = np.asarray(self.fn(cols), dtype=float)
        return np.broadcast_to(v.reshape(-1, self.d1) if v.ndim else v, (m, self.d1)).copy()

    def to_dict(self) -> dict:
        return {"known": self.label}


def constant_function(value, d1: int = 1) -> KnownFunction:
    vals = np.broadcast_to(np.asarray(value, dtype=float), (d1,)).copy()
    return KnownFunction(lambda cols: vals, d1, f"constant{vals.tolist()}")


def column_function(name: str) -> KnownFunction:
    return KnownFunction(lambda cols: cols[name], 1, f"column:{name}")


@dataclass(frozen=True, eq=False)
class CrossFitted(Function):
    """Row ``i`` is evaluated with ``functions[assignment[i]]``."""

    functions: tuple
    assignment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if len({f.d1 for f in self.functions}) != 1:
            raise DimensionMismatch("fold functions disagree on output dimension")

    @property
    def d1(self) -> int:
        return self.functions[0].d1

    def values(self, data, rows=None, overrides=None) -> np.ndarray:
        idx = np.arange(len(self.assignment)) if rows is None else np.arange(len(self.assignment))[rows]
        folds = self.assignment[idx]
        out = np.empty((len(idx), self.d1))
        for j, f in enumerate(self.functions):
            mask = folds == j
            if mask.any():
                out[mask] = f.values(data, idx[mask], overrides)
        return out

    def to_dict(self) -> dict:
        return {"folds": [_to_dict(f) for f in self.functions]}


@dataclass(frozen=True, eq=False)
class Linked(Function):
    """``link(inner(z))``; ``expit`` turns a fitted logit into a probability."""

    inner: Function
    link: str = "expit"
    clip: tuple | None = None

    @property
    def d1(self) -> int:
        return self.inner.d1

    def values(self, data, rows=None, overrides=None) -> np.ndarray:
        v = self.inner.values(data, rows, overrides)
        if self.link == "expit":
            v = expit(v)
        elif self.link != "identity":
            raise UnsupportedFamily(f"unknown link {self.link!r}")
        if self.clip is not None:
            v = np.clip(v, *self.clip)
        return v

    def to_dict(self) -> dict:
        return {"link": self.link, "clip": self.clip, "inner": _to_dict(self.inner)}


def evaluate_function(f: Function, z) -> np.ndarray:
    """Value of ``f`` at a single observation (mapping of column -> scalar)."""
    return f(z)


def combine(f: Function, w: float, g: Function) -> Function:
    """``f + w * g`` as a new function; fold-aligned when both are cross-fitted."""
    if f.d1 != g.d1:
        raise DimensionMismatch(f"cannot combine d1={f.d1} with d1={g.d1}")
    if isinstance(f, CrossFitted) and isinstance(g, CrossFitted) and len(f.functions) == len(g.functions) \
            and np.array_equal(f.assignment, g.assignment):
        return CrossFitted(tuple(combine(a, w, b) for a, b in zip(f.functions, g.functions)), f.assignment)
    return FittedFunction(terms=((1.0, f), (float(w), g)))


@dataclass(frozen=True)
class SieveConfig:
    """Recipe for a nested sieve over ``covariates``.

    ``linear_only`` columns (binary covariates) contribute only their linear
    term; ``by`` interacts every feature with the indicators ``by == 1`` and
    ``by == 0`` (a treatment-saturated space); ``bounds`` rescales each
    covariate to [-1, 1] for polynomials and positions dyadic knots.
    """

    family: str = "polynomial"
    covariates: tuple = ()
    additive: bool = True
    d1: int = 1
    bounds: Mapping[str, tuple] = field(default_factory=dict)
    linear_only: tuple = ()
    by: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "linear_only", tuple(self.linear_only))
        object.__setattr__(self, "bounds", {k: tuple(v) for k, v in dict(self.bounds).items()})
        if self.family not in FAMILIES:
            raise UnsupportedFamily(f"unknown sieve family {self.family!r}")

    def bound(self, col: str) -> tuple:
        return self.bounds.get(col, (-1.0, 1.0))

    def to_dict(self) -> dict:
        return {
            "family": self.family, "covariates": list(self.covariates), "additive": self.additive,
            "d1": self.d1, "bounds": {k: list(v) for k, v in self.bounds.items()},
            "linear_only": list(self.linear_only), "by": self.by,
        }


def _polynomial_level(cfg: SieveConfig, deg: int) -> list:
    if deg == 1:
        return [power(c, 1, *cfg.bound(c)) for c in cfg.covariates]
    curved = [c for c in cfg.covariates if c not in cfg.linear_only]
    if cfg.additive:
        return [power(c, deg, *cfg.bound(c)) for c in curved]
    feats = []
    for combo in combinations_with_replacement(cfg.covariates, deg):
        counts = {c: combo.count(c) for c in dict.fromkeys(combo)}
        if any(counts[c] > 1 for c in counts if c in cfg.linear_only):
            continue
        feats.append(Feature(tuple(Factor(c, "power", degree=counts[c], lo=cfg.bound(c)[0], hi=cfg.bound(c)[1])
                                   for c in counts)))
    return feats


def _hinge_level(cfg: SieveConfig, level: int) -> list:
    if level == 1:
        return [power(c, 1, *cfg.bound(c)) for c in cfg.covariates]
    feats = []
    for c in cfg.covariates:
        if c in cfg.linear_only:
            continue
        lo, hi = cfg.bound(c)
        denom = 2 ** (level - 1)
        for i in range(1, 2 ** (level - 2) + 1):
            feats.append(hinge(c, lo + (hi - lo) * (2 * i - 1) / denom))
    return feats


def nested_sieve(cfg: SieveConfig, k: int) -> FunctionSpace:
    """Step ``k`` of the sieve; the basis of step ``k`` is a prefix of step ``k + 1``.

    polynomial: degrees 0..k (per coordinate when additive, total degree otherwise).
    piecewise_linear: {1, x} then dyadic hinge knots, 2**(k-2) new knots per level.
    constant: {1} for every k.
    """
    if k < 1:
        raise UnsupportedFamily(f"sieve index must be >= 1, got {k}")
    feats = [CONSTANT]
    if cfg.family == "polynomial":
        for deg in range(1, k + 1):
            feats += _polynomial_level(cfg, deg)
    elif cfg.family == "piecewise_linear":
        if not cfg.additive:
            raise UnsupportedFamily("piecewise-linear sieves are additive only")
        for level in range(1, k + 1):
            feats += _hinge_level(cfg, level)
    if cfg.by is not None:
        feats = [f.times(ind) for f in feats for ind in (indicator(cfg.by, 1.0), indicator(cfg.by, 0.0))]
    return FunctionSpace.single(feats, cfg.d1, cfg.family, cfg.additive)
