"""Observation storage, CSV ingestion and cross-fitting fold plans."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidBinary, InvalidFoldCount, InvalidTime, MissingColumn, NonNumericCell, DataError

ROLE_NAMES = ("covariates", "treatment", "outcome", "time", "event")


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64-10 counter-based generator keyed by ``seed``.

    Streams for different seeds are independent by construction, so
    per-replicate substreams are obtained as ``make_rng(base + r)``.
    """
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def _normalize_roles(roles: Mapping[str, object] | None) -> dict:
    out: dict = {}
    for key, value in (roles or {}).items():
        if key in ("covariate", "covariates"):
            names = (value,) if isinstance(value, str) else tuple(value)
            out["covariates"] = out.get("covariates", ()) + names
        elif key in ROLE_NAMES:
            out[key] = str(value)
        else:
            raise DataError(f"unknown role {key!r}")
    return out


@dataclass(frozen=True)
class Dataset:
    """Named numeric columns of equal length plus role bindings.

    ``roles`` maps ``covariates`` to a tuple of column names and each of
    ``treatment``, ``outcome``, ``time``, ``event`` to a single column name.
    """

    columns: Mapping[str, np.ndarray]
    roles: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        cols = {str(k): np.asarray(v, dtype=float).reshape(-1) for k, v in self.columns.items()}
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "roles", _normalize_roles(self.roles))
        self.validate()

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values())))

    @property
    def covariates(self) -> tuple:
        return tuple(self.roles.get("covariates", ()))

    def role(self, name: str) -> str:
        try:
            return self.roles[name]
        except KeyError:
            raise MissingColumn(f"role {name!r} is not bound") from None

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise MissingColumn(f"column {name!r} not present") from None

    def get_role(self, name: str) -> np.ndarray:
        return self[self.role(name)]

    def validate(self) -> None:
        if not self.columns:
            raise DataError("dataset has no columns")
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) != 1 or 0 in lengths:
            raise DataError("all columns must share one length n >= 1")
        for name, col in self.columns.items():
            if not np.all(np.isfinite(col)):
                raise DataError(f"column {name!r} has missing or non-finite values")
        for name in self.covariates:
            self[name]
        for role in ("treatment", "event"):
            if role in self.roles:
                col = self[self.roles[role]]
                if not np.all((col == 0) | (col == 1)):
                    raise InvalidBinary(f"{role} column {self.roles[role]!r} must contain only 0/1")
        if "outcome" in self.roles:
            self[self.roles["outcome"]]
        if "time" in self.roles:
            col = self[self.roles["time"]]
            if not np.all((col >= 1) & (col == np.round(col))):
                raise InvalidTime(f"time column {self.roles['time']!r} must hold positive integers")

    def view(self, rows=None, overrides: Mapping[str, float] | None = None) -> dict:
        """Column dict restricted to ``rows`` with optional constant overrides."""
        if rows is None:
            cols = dict(self.columns)
            m = self.n
        else:
            cols = {k: v[rows] for k, v in self.columns.items()}
            m = len(next(iter(cols.values())))
        for k, v in (overrides or {}).items():
            cols[k] = np.full(m, float(v))
        return cols

    def take(self, rows) -> "Dataset":
        return Dataset(self.view(rows), self.roles)

    def head(self, m: int) -> "Dataset":
        return self.take(np.arange(m))

    def tail(self, m: int) -> "Dataset":
        return self.take(np.arange(self.n - m, self.n))


def load_csv(path, roles: Mapping[str, object]) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Only columns referenced by ``roles`` are required to exist, but every
    column must parse as a number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    norm = _normalize_roles(roles)
    needed = list(norm.get("covariates", ())) + [v for k, v in norm.items() if k != "covariates"]
    for name in needed:
        if name not in header:
            raise MissingColumn(f"column {name!r} not in {path}")
    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 1, j] = float(cell)
            except ValueError:
                raise NonNumericCell(i, header[j], cell) from None
            if not np.isfinite(values[i - 1, j]):
                raise NonNumericCell(i, header[j], cell)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset({h: values[:, j] for j, h in enumerate(header)}, norm)


def write_csv(data: Dataset, path) -> None:
    names = list(data.columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(data.n):
            w.writerow([repr(float(data.columns[k][i])) for k in names])


@dataclass(frozen=True)
class CrossFitPlan:
    """Fold assignment ``assignment[i] in {0..J-1}`` for each of ``n`` rows."""

    J: int
    assignment: np.ndarray
    seed: int = 0

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        if self.J < 1 or np.any(a < 0) or np.any(a >= self.J):
            raise InvalidFoldCount("fold indices must lie in 0..J-1")

    @property
    def n(self) -> int:
        return len(self.assignment)

    def fold(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def train(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != j)

    def sizes(self) -> list:
        return np.bincount(self.assignment, minlength=self.J).tolist()

    @classmethod
    def single(cls, n: int) -> "CrossFitPlan":
        """One fold holding every row; used when nuisances come from a separate sample."""
        return cls(1, np.zeros(n, dtype=np.int64))


def make_folds(n: int, J: int, seed: int, strata: Sequence[float] | None = None) -> CrossFitPlan:
    """Seeded Fisher-Yates shuffle followed by round-robin dealing.

    With ``strata`` (e.g. the treatment column) rows are shuffled within each
    stratum and dealt stratum after stratum with a running counter, which keeps
    the overall fold sizes within one of each other.
    """
    if J < 2 or J > n:
        raise InvalidFoldCount(f"need 2 <= J <= n, got J={J}, n={n}")
    rng = make_rng(seed)
    if strata is None:
        order = rng.permutation(n)
    else:
        s = np.asarray(strata)
        order = np.concatenate([rng.permutation(np.flatnonzero(s == v)) for v in np.unique(s)])
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % J
    return CrossFitPlan(J, assignment, seed)
