import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import betaln, expit

from autodml.errors import ConfigError
from autodml.simulate import (DgpSpec, MetricsTable, StudyConfig, bg_propensity, cate_mean, cate_sd,
                              gen_beta_geometric, gen_cate, monte_carlo, summarize, true_psi)


def sum_density(u):
    """Density of X1 + X2 + X3 for X ~ Uniform(-1, 1)^3 (shifted Irwin-Hall)."""
    v = (u + 3) / 2
    if v <= 0 or v >= 3:
        return 0.0
    if v < 1:
        f = v * v / 2
    elif v < 2:
        f = (-2 * v * v + 6 * v - 3) / 2
    else:
        f = (3 - v) ** 2 / 2
    return f / 2


def survival(la, lb, t):
    """P(T > t) = B(alpha, beta + t) / B(alpha, beta)."""
    al, be = math.exp(la), math.exp(lb)
    return math.exp(betaln(al, be + t) - betaln(al, be))


def bg_oracle(t0):
    r3 = math.sqrt(3)

    def g(u):
        p = expit(2 * r3 * u)
        s = r3 * u
        return p * survival(-0.1 + s + 0.25, s + 0.1, t0) + (1 - p) * survival(-0.1 + s, s + 0.1, t0)
    return sum(quad(lambda u: sum_density(u) * g(u), lo, hi, epsabs=1e-13, epsrel=1e-12)[0]
               for lo, hi in ((-3, -1), (-1, 1), (1, 3)))


def test_propensity_at_origin():
    assert bg_propensity(np.zeros(3)) == 0.5


def test_sum_density_integrates_to_one():
    total = sum(quad(sum_density, lo, hi)[0] for lo, hi in ((-3, -1), (-1, 1), (1, 3)))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_censoring_rule():
    d = gen_beta_geometric(DgpSpec("beta_geometric", 5000, seed=1))
    assert d["t"].max() <= 6 and d["t"].min() >= 1
    assert set(np.unique(d["delta"])) <= {0.0, 1.0}
    assert np.all(d["t"][d["delta"] == 0] == 6)


def test_treatment_rate_matches_quadrature():
    n = 100_000
    d = gen_beta_geometric(DgpSpec("beta_geometric", n, seed=2))
    analytic = sum(quad(lambda u: sum_density(u) * expit(2 * math.sqrt(3) * u), lo, hi)[0]
                   for lo, hi in ((-3, -1), (-1, 1), (1, 3)))
    assert abs(d["a"].mean() - analytic) < 3 * math.sqrt(0.25 / n)


def test_event_rate_matches_quadrature():
    n = 100_000
    d = gen_beta_geometric(DgpSpec("beta_geometric", n, seed=3))
    p = 1 - bg_oracle(6)
    assert abs(d["delta"].mean() - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_bg_truth_matches_quadrature():
    assert true_psi(DgpSpec("beta_geometric", 10)) == pytest.approx(bg_oracle(12), abs=1e-5)
    assert true_psi(DgpSpec("beta_geometric", 10, t0=3)) == pytest.approx(bg_oracle(3), abs=1e-5)


def test_bg_truth_override_hook():
    spec = DgpSpec("beta_geometric", 10)
    assert true_psi(spec, x_override=[0, 0, 0], a_override=0) == pytest.approx(survival(-0.1, 0.1, 12), rel=1e-12)


def test_truth_is_deterministic():
    spec = DgpSpec("beta_geometric", 10)
    assert true_psi(spec) == true_psi(spec)


def test_cate_truth():
    assert true_psi(DgpSpec("cate_rlearner", 10)) == pytest.approx(0.96667, abs=1e-5)


def test_cate_truth_monte_carlo():
    rng = np.random.default_rng(11)
    n = 400
    base, pert = [], []
    for _ in range(10):
        x = rng.uniform(-1, 1, size=(1_000_000, 3))
        base.append(np.mean(cate_mean(1.0, x) - cate_mean(0.0, x)))
        pert.append(np.mean(cate_mean(1.0, x, n) - cate_mean(0.0, x, n)))
    # sd of the effect is below 1; of the perturbed contrast below 1.5
    assert abs(np.mean(base) - true_psi(DgpSpec("cate_rlearner", n))) < 4 / math.sqrt(1e7)
    assert abs(np.mean(pert) - true_psi(DgpSpec("cate_rlearner", n, local_perturbation=True))) < 6 / math.sqrt(1e7)


def test_cate_formulas_at_origin():
    x = np.zeros(3)
    assert cate_sd(x) == 0.5
    assert cate_mean(1.0, x) == pytest.approx(0.3)


def test_cate_generator_shape_and_determinism():
    a = gen_cate(DgpSpec("cate_rlearner", 100, seed=4))
    b = gen_cate(DgpSpec("cate_rlearner", 100, seed=4))
    assert a.n == 100
    np.testing.assert_array_equal(a["y"], b["y"])
    assert max(np.abs(a[c]).max() for c in ("x1", "x2", "x3")) <= 1


def test_dgp_validation():
    with pytest.raises(ConfigError):
        DgpSpec("cate_rlearner", 0)
    with pytest.raises(ConfigError):
        DgpSpec("probit", 10)
    with pytest.raises(ConfigError):
        StudyConfig([DgpSpec("cate_rlearner", 10)], R=0)


def test_summarize_single_replicate():
    row = summarize("tmle", 10, [(1.2, 0.1, 1.0, 1.4)], 1.0)
    assert row["bias"] == pytest.approx(0.2) and row["R"] == 1 and row["coverage"] == 1.0


def test_summarize_oracle_estimator_covers():
    psi0 = 0.5
    z = 1.959963984540054
    row = summarize("oracle", 10, [(psi0, 1.0, psi0 - z, psi0 + z)] * 20, psi0)
    assert row["coverage"] == 1.0 and row["bias"] == 0.0


def test_summarize_counts_failures():
    row = summarize("tmle", 10, [None, (1.0, 0.1, 0.9, 1.1)], 1.0)
    assert row["failures"] == 1 and row["R"] == 2


def test_monte_carlo_r1_bias_and_workers():
    cfg = StudyConfig([DgpSpec("cate_rlearner", 200)], ("onestep", "tmle"), R=3, base_seed=5,
                      problem_options={"k": 2, "nuisance_k": 2})
    t1 = monte_carlo(cfg, workers=1)
    t2 = monte_carlo(cfg, workers=2)
    assert t1.to_csv() == t2.to_csv()
    est = t1.estimates("tmle", 200)
    assert len(est) == 3 and np.all(np.isfinite(est))
    one = monte_carlo(StudyConfig([DgpSpec("cate_rlearner", 200)], ("tmle",), R=1, base_seed=5,
                                  problem_options={"k": 2, "nuisance_k": 2}))
    assert one.row("tmle", 200)["bias"] == pytest.approx(abs(est[0] - true_psi(DgpSpec("cate_rlearner", 200))))


def test_metrics_csv_columns(tmp_path):
    table = MetricsTable([summarize("tmle", 10, [(1.0, 0.1, 0.9, 1.1)], 1.0)])
    path = tmp_path / "m.csv"
    text = table.to_csv(path)
    assert path.read_text() == text
    assert text.splitlines()[0] == "estimator,n,R,bias,se,coverage,failures,true_psi"
