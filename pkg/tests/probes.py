"""Random probe problems shared by the derivative tests and the acceptance suite."""

import numpy as np
from scipy.special import expit

from autodml import Dataset, FunctionalSpec, KnownFunction, LossSpec

ROLES = {"covariates": ("x1",), "treatment": "a", "outcome": "y", "time": "t", "event": "delta"}


def probe_data(m, rng, binary_y=False):
    x = rng.uniform(-1, 1, m)
    a = (rng.random(m) < expit(x)).astype(float)
    y = (rng.random(m) < 0.5).astype(float) if binary_y else rng.normal(size=m)
    t = rng.integers(1, 13, m).astype(float)
    delta = (rng.random(m) < 0.6).astype(float)
    return Dataset({"x1": x, "a": a, "y": y, "t": t, "delta": delta}, ROLES)


PI = KnownFunction(lambda c: 0.2 + 0.6 * expit(c["x1"]), label="pi")
M0 = KnownFunction(lambda c: np.sin(c["x1"]), label="m0")
MU = KnownFunction(lambda c: expit(0.4 * c["x1"] + 0.7 * c["a"] - 0.2), label="mu")
W = KnownFunction(lambda c: 0.5 + c["x1"] ** 2, label="w")
ZETA = KnownFunction(lambda c: np.cos(3 * c["x1"]), label="zeta")
THETA1 = KnownFunction(lambda c: 0.3 * c["x1"] - 0.1, label="theta")


def all_losses():
    base = LossSpec("rlearner", {"pi": PI, "m": M0})
    return {
        "squared_error": LossSpec("squared_error"),
        "logistic": LossSpec("logistic", params={"target": "a"}),
        "pseudo_outcome": LossSpec("pseudo_outcome", {"w": W, "zeta": ZETA}),
        "rlearner": base,
        "drlearner": LossSpec("drlearner", {"pi": PI, "mu": MU}),
        "ortho_logistic": LossSpec("ortho_logistic", {"pi": PI, "mu": MU}),
        "riesz_quadratic": LossSpec("riesz_quadratic", params={
            "base": base, "theta": THETA1, "functional": FunctionalSpec("mean_of_theta")}),
        "beta_geometric_nll": LossSpec("beta_geometric_nll", d1=2),
    }


def finite_difference_errors(loss, data, th, rng, eps_g=1e-5, eps_h=1e-4):
    """Max relative errors of g^T h and h1^T H h2 against central differences."""
    m, d1 = th.shape
    h1, h2 = rng.normal(size=(m, d1)), rng.normal(size=(m, d1))
    pl = loss.pointwise(th, data)
    val = lambda t: loss.pointwise(t, data).value
    fd_g = (val(th + eps_g * h1) - val(th - eps_g * h1)) / (2 * eps_g)
    ex_g = np.einsum("ij,ij->i", pl.grad, h1)
    e = eps_h
    fd_h = (val(th + e * h1 + e * h2) - val(th + e * h1 - e * h2) - val(th - e * h1 + e * h2)
            + val(th - e * h1 - e * h2)) / (4 * e * e)
    ex_h = np.einsum("ij,ijk,ik->i", h1, pl.hess, h2)
    rel = lambda fd, ex: np.max(np.abs(fd - ex) / np.maximum(np.abs(ex), 1e-3))
    return rel(fd_g, ex_g), rel(fd_h, ex_h), pl


def probe_theta(kind, m, rng):
    if kind == "beta_geometric_nll":
        return rng.uniform(-2, 2, size=(m, 2))
    return rng.uniform(-1.5, 1.5, size=(m, 1))
