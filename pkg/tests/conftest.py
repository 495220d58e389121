import numpy as np
import pytest

from autodml import Dataset


def row(**cols):
    """One-observation dataset; roles inferred from the usual column names."""
    roles = {"covariates": tuple(k for k in cols if k.startswith("x"))}
    for name, role in (("a", "treatment"), ("y", "outcome"), ("t", "time"), ("delta", "event")):
        if name in cols:
            roles[role] = name
    return Dataset({k: [v] for k, v in cols.items()}, roles)


def random_ay(n, seed=0, p=0.5):
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, n)
    a = (r.random(n) < p).astype(float)
    y = x + a + r.standard_normal(n)
    return Dataset({"x1": x, "a": a, "y": y}, {"covariates": ("x1",), "treatment": "a", "outcome": "y"})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
