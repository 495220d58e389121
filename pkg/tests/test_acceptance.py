"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import dataclasses
import json
import math
import time

import numpy as np
import pytest
from scipy.special import expit

from autodml import (Dataset, FittedFunction, FoldFits, FunctionalSpec, FunctionSpace, KnownFunction, LossSpec,
                     SieveConfig, assemble_riesz_system, bg_log_derivatives, build_problem, constant_function,
                     cross_fit_nuisances, fit_erm, fit_riesz, make_folds, nested_sieve, one_step_estimate,
                     stabilization_factor, tmle_estimate)
from autodml.basis import CallableFeature, Linked, indicator
from autodml.cli import main
from autodml.riesz import normal_equation_residual
from autodml.simulate import DGP_BOUNDS, DgpSpec, StudyConfig, gen_beta_geometric, gen_cate, monte_carlo, true_psi
from conftest import ACCEPTANCE_LINES
from probes import all_losses, finite_difference_errors, probe_data, probe_theta

SE = LossSpec("squared_error")
ATE = FunctionalSpec("ate_contrast", treatment="a")
MEAN1 = FunctionalSpec("linear_custom", terms=((1.0, {"a": 1.0}),))


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def ate_data(n, seed, binary_x=False):
    r = np.random.default_rng(seed)
    x = r.integers(0, 3, n).astype(float) if binary_x else r.uniform(-1, 1, n)
    a = (r.random(n) < expit(0.8 * x)).astype(float)
    y = np.sin(2 * x) + a * (1 + x) + r.normal(size=n)
    return Dataset({"x1": x, "a": a, "y": y}, {"covariates": ("x1",), "treatment": "a", "outcome": "y"})


def test_criterion_1_derivatives():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_g = worst_h = 0.0
    for kind, loss in all_losses().items():
        data = probe_data(50, rng, binary_y=kind == "ortho_logistic")
        th = probe_theta(kind, 50, rng)
        eg, eh, _ = finite_difference_errors(loss, data, th, rng)
        worst_g, worst_h = max(worst_g, eg), max(worst_h, eh)
    # functionals: directional derivative against central differences of the value
    data = probe_data(50, rng)
    for func in (FunctionalSpec("bg_survival", t0=12), FunctionalSpec("ate_contrast"), FunctionalSpec("mean_of_theta"),
                 ATE, MEAN1):
        d1 = 2 if func.kind == "bg_survival" else 1
        base = rng.uniform(-1.5, 1.5, size=(50, d1))
        h = rng.normal(size=(50, d1))
        theta = KnownFunction(lambda c, base=base: base[: len(c["x1"])], d1=d1)
        hf = KnownFunction(lambda c, h=h: h[: len(c["x1"])], d1=d1)
        eps = 1e-5
        plus = KnownFunction(lambda c: base + eps * h, d1=d1)
        minus = KnownFunction(lambda c: base - eps * h, d1=d1)
        fd = (func.values(plus, data) - func.values(minus, data)) / (2 * eps)
        ex = func.derivative(theta, hf, data)
        worst_g = max(worst_g, float(np.max(np.abs(fd - ex) / np.maximum(np.abs(ex), 1e-3))))
    elapsed = time.perf_counter() - t0
    report(1, worst_g < 1e-5 and worst_h < 1e-4 and elapsed < 10,
           f"max rel err gradient {worst_g:.2e}, Hessian {worst_h:.2e}, {elapsed:.2f} s")


def _rel(fd, ex):
    return float(np.linalg.norm(fd - ex) / max(np.linalg.norm(ex), 1e-300))


def test_criterion_2_bg_recursions():
    rng = np.random.default_rng(2)
    t_start = time.perf_counter()
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        a, b = rng.uniform(-2, 2, 2)
        t = int(rng.integers(1, 13))
        r = bg_log_derivatives(a, b, t)
        for which in ("event", "surv"):
            f = lambda x, y: bg_log_derivatives(x, y, t)[f"log_{which}"]
            g = lambda x, y: np.asarray(bg_log_derivatives(x, y, t)[f"grad_{which}"])
            fd_g = np.array([(f(a + h, b) - f(a - h, b)) / (2 * h), (f(a, b + h) - f(a, b - h)) / (2 * h)])
            fd_h = np.column_stack([(g(a + h, b) - g(a - h, b)) / (2 * h), (g(a, b + h) - g(a, b - h)) / (2 * h)])
            worst = max(worst, _rel(fd_g, np.asarray(r[f"grad_{which}"])),
                        _rel(fd_h, np.asarray(r[f"hess_{which}"])))
    p2 = math.exp(bg_log_derivatives(0.0, 0.0, 2)["log_surv"])
    elapsed = time.perf_counter() - t_start
    report(2, worst < 1e-6 and abs(p2 - 1 / 3) < 1e-12 and elapsed < 5,
           f"max rel err {worst:.2e}, |P(T>2) - 1/3| = {abs(p2 - 1 / 3):.1e}, {elapsed:.2f} s")


def test_criterion_3_aipw_identity():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(1000 + seed)
        n = int(r.integers(20, 200))
        data = ate_data(n, seed)
        space = nested_sieve(SieveConfig("polynomial", ("x1",), by="a"), int(r.integers(1, 4)))
        theta = FittedFunction.from_vector(space, r.normal(size=space.p))
        alpha = FittedFunction.from_vector(space, r.normal(size=space.p))
        rep = one_step_estimate(data, None, FoldFits(SE, ATE, theta, alpha, np.zeros(n, dtype=int)))
        x, a, y = data["x1"], data["a"], data["y"]
        t1 = theta.values({"x1": x, "a": np.ones(n)})[:, 0]
        t0 = theta.values({"x1": x, "a": np.zeros(n)})[:, 0]
        ta = np.where(a == 1, t1, t0)
        al = alpha.values({"x1": x, "a": a})[:, 0]
        aipw = np.mean(t1 - t0 + al * (y - ta))
        worst = max(worst, abs(rep.psi_hat - aipw))
    report(3, worst < 1e-12, f"max |one-step - AIPW| over 100 fixtures {worst:.1e}")


def _problems(seed):
    data = ate_data(400, seed)
    bounds = {"x1": (-1.0, 1.0)}
    out = [(build_problem(name, data, k=3, bounds=bounds), data)
           for name in ("riesz_linear", "mean_outcome", "ate_rlearner")]
    bg = gen_beta_geometric(DgpSpec("beta_geometric", 600, seed=seed))
    out.append((build_problem("bg_survival", bg, k=2, bounds=DGP_BOUNDS), bg))
    return out


def test_criterion_4_normal_equations():
    worst = 0.0
    for seed in range(3):
        for problem, data in _problems(seed):
            plan = make_folds(data.n, 3, seed)
            fits = cross_fit_nuisances(data, plan, problem)
            loss = fits.loss
            for j in range(plan.J):
                theta = fits.theta_folds[j]
                tr = plan.train(j)
                alpha = fit_riesz(assemble_riesz_system(loss, theta, problem.functional, problem.alpha_space,
                                                        data, tr))
                res = normal_equation_residual(loss, theta, problem.functional, alpha, data, tr)
                worst = max(worst, float(np.max(np.abs(res))))
    # discrete design, balanced treatment so the known propensity is exactly 0.5
    dev = 0.0
    for seed in range(5):
        r = np.random.default_rng(seed)
        cells = r.integers(2, 30, size=3)
        x = np.repeat([0.0, 1.0, 2.0], 2 * cells)
        a = np.concatenate([np.r_[np.ones(c), np.zeros(c)] for c in cells])
        data = Dataset({"x1": x, "a": a, "y": r.normal(size=x.size)},
                       {"covariates": ("x1",), "treatment": "a", "outcome": "y"})
        space = FunctionSpace.single([indicator("x1", v).times(indicator("a", t)) for v in (0.0, 1.0, 2.0)
                                      for t in (1.0, 0.0)])
        theta = fit_erm(SE, space, data)
        alpha = fit_riesz(assemble_riesz_system(SE, theta, ATE, space, data))
        dev = max(dev, float(np.max(np.abs(alpha.vector - np.tile([2.0, -2.0], 3)))))
    report(4, worst < 1e-8 and dev < 1e-10,
           f"max normal-equation residual {worst:.1e}, max |alpha - (2,-2)| {dev:.1e}")


def test_criterion_5_tmle_contracts():
    score = infl = gap = 0.0
    for seed in range(20):
        r = np.random.default_rng(500 + seed)
        data = ate_data(int(r.integers(100, 600)), 500 + seed)
        name = ("riesz_linear", "mean_outcome")[seed % 2]
        problem = build_problem(name, data, k=int(r.integers(1, 5)), bounds={"x1": (-1.0, 1.0)})
        plan = make_folds(data.n, int(r.integers(2, 6)), seed)
        fits = cross_fit_nuisances(data, plan, problem)
        tm = tmle_estimate(data, plan, fits)
        st = one_step_estimate(data, plan, fits, stabilize=True)
        score = max(score, abs(tm.diagnostics["score"]))
        infl = max(infl, abs(float(np.mean(tm.influence))))
        gap = max(gap, abs(tm.psi_hat - st.psi_hat))
    report(5, score < 1e-8 and infl < 1e-10 and gap < 1e-10,
           f"max |score| {score:.1e}, max |mean influence| {infl:.1e}, max |stabilized - tmle| {gap:.1e}")


def test_criterion_6_stabilization_identity():
    worst = 0.0
    for seed in range(20):
        problem, data = _problems(seed)[seed % 4]
        cf = cross_fit_nuisances(data, make_folds(data.n, 2, seed), problem)
        theta = fit_erm(cf.loss, problem.theta_space, data, None, problem.fit_config)
        alpha = fit_riesz(assemble_riesz_system(cf.loss, theta, problem.functional, problem.alpha_space, data))
        fits = FoldFits(cf.loss, problem.functional, theta, alpha, np.zeros(data.n, dtype=int))
        worst = max(worst, abs(stabilization_factor(data, None, fits) - 1.0))
    report(6, worst < 1e-10, f"max |eps_n - 1| over 20 problems {worst:.1e}")


def test_criterion_7_double_robustness():
    """theta forced to zero; alpha spanned by a / pi_hat and (1 - a) / (1 - pi_hat)."""
    psi0 = true_psi(DgpSpec("cate_rlearner", 10_000))
    t0 = time.perf_counter()
    errors = []
    for seed in range(10):
        data = gen_cate(DgpSpec("cate_rlearner", 10_000, seed=seed))
        problem = build_problem("riesz_linear", data, bounds=DGP_BOUNDS, riesz_ridge=0.0)
        sieve = SieveConfig("polynomial", ("x1", "x2", "x3"), True, bounds=DGP_BOUNDS)
        logit = fit_erm(LossSpec("logistic", params={"target": "a"}), nested_sieve(sieve, 3), data)
        pi = Linked(logit, "expit", (0.01, 0.99))
        treated = CallableFeature(lambda c: c["a"] / pi.values(c)[:, 0], "a/pi")
        control = CallableFeature(lambda c: (1 - c["a"]) / (1 - pi.values(c)[:, 0]), "(1-a)/(1-pi)")
        problem = dataclasses.replace(problem, alpha_sieve=FunctionSpace.single([treated, control]))
        plan = make_folds(data.n, 5, seed)
        fits = cross_fit_nuisances(data, plan, problem, theta=constant_function(0.0))
        errors.append(abs(one_step_estimate(data, plan, fits).psi_hat - psi0))
    elapsed = time.perf_counter() - t0
    report(7, max(errors) < 0.1 and elapsed < 60,
           f"max |psi_hat - {psi0:.4f}| over 10 seeds {max(errors):.4f}, {elapsed:.1f} s")


@pytest.mark.slow
def test_criterion_8_coverage():
    R = 200
    cfg = StudyConfig([DgpSpec("cate_rlearner", 2000)], ("tmle", "onestep_stabilized"), R=R, base_seed=0, J=5,
                      problem_options={"k": 4, "nuisance_k": 4})
    t0 = time.perf_counter()
    table = monte_carlo(cfg)
    elapsed = time.perf_counter() - t0
    ok = elapsed < 600
    parts = []
    for name in cfg.estimators:
        row = table.row(name, 2000)
        mcse = row["se"] / math.sqrt(R - row["failures"])
        good = 0.90 <= row["coverage"] <= 0.98 and row["bias"] < 3 * mcse and row["failures"] == 0
        ok &= good
        parts.append(f"{name} coverage {row['coverage']:.3f} bias {row['bias']:.4f} (3 MCSE {3 * mcse:.4f})")
    report(8, ok, "; ".join(parts) + f"; {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_9_autosieve_consistency():
    R = 50
    opts = {"family": "piecewise_linear", "additive": True, "k": 1, "k_max": 3}
    cfg = StudyConfig([DgpSpec("beta_geometric", 500), DgpSpec("beta_geometric", 5000)], ("autosieve",), R=R,
                      base_seed=0, J=5, problem_options=opts)
    t0 = time.perf_counter()
    table = monte_carlo(cfg)
    elapsed = time.perf_counter() - t0
    psi0 = true_psi(DgpSpec("beta_geometric", 500))
    small = np.abs(table.estimates("autosieve", 500) - psi0)
    large = np.abs(table.estimates("autosieve", 5000) - psi0)
    wins = int(np.sum(large < small))
    cov = table.row("autosieve", 5000)["coverage"]
    report(9, wins >= 45 and cov >= 0.85 and elapsed < 900,
           f"paired wins {wins}/{R} (need 45), coverage at n=5000 {cov:.2f}, {elapsed:.0f} s")


def test_criterion_10_determinism(tmp_path, capsys):
    cfg = {"command": "simulate", "dgp": {"kind": "beta_geometric", "n": [200, 300]},
           "estimators": ["onestep", "tmle", "autosieve"], "R": 4, "seed": 3, "basis": {"k": 1, "k_max": 2}}
    path = tmp_path / "s.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for workers in (1, 2, 3):
        out = tmp_path / f"m{workers}.csv"
        assert main(["simulate", "--config", str(path), "--out", str(out), "--workers", str(workers)]) == 0
        outs.append(out.read_bytes())
    capsys.readouterr()
    report(10, outs[0] == outs[1] == outs[2], f"metrics CSV identical across 1, 2 and 3 workers ({len(outs[0])} bytes)")
