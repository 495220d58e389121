"""Synthetic data-generating processes and a Monte Carlo harness."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import expit
from scipy.stats import qmc

from .data import Dataset, make_rng
from .errors import AutoDMLError, ConfigError
from .estimators import ESTIMATORS, Session
from .loss import bg_terms
from .problems import build_problem

DGP_KINDS = ("beta_geometric", "cate_rlearner")
SQRT3 = math.sqrt(3.0)
QMC_LOG2_NODES = 20


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    n: int
    seed: int = 0
    local_perturbation: bool = False
    censor: int = 6
    t0: int = 12

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ConfigError(f"unknown dgp kind {self.kind!r}; choose from {', '.join(DGP_KINDS)}")
        if self.n < 1 or self.censor < 1 or self.t0 < 1:
            raise ConfigError("n, censor and t0 must all be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# beta-geometric churn


def bg_propensity(x: np.ndarray) -> np.ndarray:
    return expit(2 * SQRT3 * np.sum(x, axis=-1))


def bg_parameters(x: np.ndarray, a: np.ndarray) -> tuple:
    """True (log alpha, log beta) given covariates and treatment."""
    s = SQRT3 * np.sum(x, axis=-1)
    return -0.1 + s + 0.25 * a, s + 0.1


def gen_beta_geometric(spec: DgpSpec) -> Dataset:
    """Covariates on the cube, logistic treatment, churn time by per-period hazard draws.

    Every period draws one uniform per row (also for rows already churned) so
    the stream layout does not depend on the outcomes.
    """
    rng = make_rng(spec.seed)
    n = spec.n
    x = rng.uniform(-1.0, 1.0, size=(n, 3))
    a = (rng.random(n) < bg_propensity(x)).astype(float)
    la, lb = bg_parameters(x, a)
    al, be = np.exp(la), np.exp(lb)
    t = np.full(n, spec.censor, dtype=float)
    delta = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for s in range(1, spec.censor + 1):
        u = rng.random(n)
        churn = alive & (u < al / (al + be + s - 1))
        t[churn] = s
        delta[churn] = 1.0
        alive &= ~churn
    cols = {"x1": x[:, 0], "x2": x[:, 1], "x3": x[:, 2], "a": a, "t": t, "delta": delta}
    roles = {"covariates": ("x1", "x2", "x3"), "treatment": "a", "time": "t", "event": "delta"}
    return Dataset(cols, roles)


def bg_survival_given_sum(u: np.ndarray, t0: int) -> np.ndarray:
    """E[P(T > t0 | A, X) | x1 + x2 + x3 = u], averaging over the treatment."""
    s = SQRT3 * u
    p = expit(2 * SQRT3 * u)
    out = np.zeros_like(u, dtype=float)
    for av, w in ((1.0, p), (0.0, 1 - p)):
        r = bg_terms(-0.1 + s + 0.25 * av, s + 0.1, t0)
        out += w * np.exp(r.log_surv)
    return out


@lru_cache(maxsize=32)
def _bg_truth_qmc(t0: int, log2_nodes: int) -> float:
    nodes = qmc.Sobol(d=3, scramble=True, seed=20240607).random_base2(log2_nodes)
    u = np.sum(2 * nodes - 1, axis=1)
    return float(np.mean(bg_survival_given_sum(u, t0)))


# ---------------------------------------------------------------------------
# heterogeneous-effect design


def cate_propensity(x: np.ndarray) -> np.ndarray:
    return expit(np.sin(2 * x[..., 0]) + 2 * x[..., 1] + np.abs(x[..., 2]))


def cate_effect(x: np.ndarray) -> np.ndarray:
    return 0.3 + 2 * x[..., 2] ** 2 + np.sin(2 * x[..., 0])


def cate_mean(a, x: np.ndarray, n: int | None = None) -> np.ndarray:
    """Outcome mean; with ``n`` the sqrt(n)-local fluctuation term is added."""
    base = np.sin(2 * x[..., 0]) + np.abs(x[..., 2]) + a * cate_effect(x)
    if n is None:
        return base
    pa = expit(x[..., 1])
    return base + (a - pa) / (pa * (1 - pa)) / math.sqrt(n)


def cate_sd(x: np.ndarray) -> np.ndarray:
    return 0.5 + (x[..., 0] + x[..., 2]) / 8


def gen_cate(spec: DgpSpec) -> Dataset:
    rng = make_rng(spec.seed)
    n = spec.n
    x = rng.uniform(-1.0, 1.0, size=(n, 3))
    a = (rng.random(n) < cate_propensity(x)).astype(float)
    mu = cate_mean(a, x, n if spec.local_perturbation else None)
    y = mu + cate_sd(x) * rng.standard_normal(n)
    cols = {"x1": x[:, 0], "x2": x[:, 1], "x3": x[:, 2], "a": a, "y": y}
    return Dataset(cols, {"covariates": ("x1", "x2", "x3"), "treatment": "a", "outcome": "y"})


def generate(spec: DgpSpec) -> Dataset:
    return gen_beta_geometric(spec) if spec.kind == "beta_geometric" else gen_cate(spec)


def true_psi(spec: DgpSpec, x_override=None, a_override=None, log2_nodes: int = QMC_LOG2_NODES) -> float:
    """Ground truth of the target for ``spec``.

    cate: 0.3 + 2/3, plus 2 (1 + sinh 1) / sqrt(n) under the local perturbation.
    beta_geometric: E[P(T > t0 | A, X)] by scrambled Sobol nodes over the cube
    (cached).  ``x_override``/``a_override`` pin the covariates and treatment
    so that no integration is needed.
    """
    if spec.kind == "cate_rlearner":
        psi = 0.3 + 2.0 / 3.0
        if spec.local_perturbation:
            psi += 2.0 * (1.0 + math.sinh(1.0)) / math.sqrt(spec.n)
        return psi
    if x_override is not None:
        x = np.asarray(x_override, dtype=float).reshape(1, 3)
        if a_override is None:
            return float(bg_survival_given_sum(x.sum(axis=1), spec.t0)[0])
        la, lb = bg_parameters(x, np.array([float(a_override)]))
        return float(np.exp(bg_terms(la, lb, spec.t0).log_surv[0]))
    return _bg_truth_qmc(int(spec.t0), int(log2_nodes))


# ---------------------------------------------------------------------------
# Monte Carlo harness


DGP_BOUNDS = {"x1": (-1.0, 1.0), "x2": (-1.0, 1.0), "x3": (-1.0, 1.0), "a": (0.0, 1.0)}


def default_problem(kind: str) -> str:
    return "bg_survival" if kind == "beta_geometric" else "ate_rlearner"


@dataclass(frozen=True)
class StudyConfig:
    """Everything that determines a Monte Carlo run."""

    dgps: tuple
    estimators: tuple = ("tmle",)
    R: int = 100
    base_seed: int = 0
    J: int = 5
    level: float = 0.95
    split: bool = False
    problem: str | None = None
    problem_options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dgps", tuple(self.dgps))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        if not self.dgps:
            raise ConfigError("at least one dgp spec is required")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATORS)}")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")


def run_replicate(cfg: StudyConfig, spec: DgpSpec, r: int) -> list:
    """One replicate: [(psi_hat, se, lo, hi) or None] per estimator."""
    seed = cfg.base_seed + r
    full = generate(replace(spec, seed=seed, n=2 * spec.n if cfg.split else spec.n))
    if cfg.split:
        train, data = full.head(spec.n), full.tail(spec.n)
    else:
        train, data = None, full
    opts = dict(cfg.problem_options)
    opts.setdefault("bounds", DGP_BOUNDS)
    if spec.kind == "beta_geometric":
        opts.setdefault("t0", spec.t0)
    out = []
    try:
        problem = build_problem(cfg.problem or default_problem(spec.kind), data, **opts)
        session = Session(data, problem, cfg.J, seed, cfg.level, train)
    except AutoDMLError:
        return [None] * len(cfg.estimators)
    for name in cfg.estimators:
        try:
            rep = session.run(name)
            out.append((rep.psi_hat, rep.se, rep.ci[0], rep.ci[1]))
        except AutoDMLError:
            out.append(None)
    return out


def _task(args):
    return run_replicate(*args)


@dataclass
class MetricsTable:
    """Per-(estimator, n) Monte Carlo summaries plus the raw per-replicate results."""

    rows: list
    replicates: dict = field(default_factory=dict)

    COLUMNS = ("estimator", "n", "R", "bias", "se", "coverage", "failures", "true_psi")

    def row(self, estimator: str, n: int) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["n"] == n:
                return r
        raise KeyError((estimator, n))

    def estimates(self, estimator: str, n: int) -> np.ndarray:
        """psi_hat per replicate in replicate order; NaN marks a failure."""
        return np.array([np.nan if v is None else v[0] for v in self.replicates[(estimator, n)]])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r[c] if isinstance(r[c], (str, int)) else repr(float(r[c])) for c in self.COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def summarize(estimator: str, n: int, results: list, psi0: float) -> dict:
    ok = [v for v in results if v is not None]
    R = len(results)
    if ok:
        est = np.array([v[0] for v in ok])
        bias = abs(float(np.mean(est)) - psi0)
        sd = float(np.std(est, ddof=1)) if len(est) > 1 else 0.0
        coverage = float(np.mean([lo <= psi0 <= hi for _, _, lo, hi in ok]))
    else:
        bias = sd = coverage = float("nan")
    return {"estimator": estimator, "n": n, "R": R, "bias": bias, "se": sd, "coverage": coverage,
            "failures": R - len(ok), "true_psi": psi0}


def monte_carlo(cfg: StudyConfig, workers: int = 1) -> MetricsTable:
    """Run every estimator on R replicates of every dgp spec.

    Replicate r uses seed base_seed + r for data and folds; results are
    aggregated in replicate order, so the table does not depend on ``workers``.
    """
    tasks = [(cfg, spec, r) for spec in cfg.dgps for r in range(cfg.R)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_task(t) for t in tasks]
    rows, reps = [], {}
    for si, spec in enumerate(cfg.dgps):
        chunk = results[si * cfg.R:(si + 1) * cfg.R]
        psi0 = true_psi(spec)
        for ei, name in enumerate(cfg.estimators):
            per = [c[ei] for c in chunk]
            reps[(name, spec.n)] = per
            rows.append(summarize(name, spec.n, per, psi0))
    return MetricsTable(rows, reps)
