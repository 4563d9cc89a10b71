import sys

import numpy as np
import pytest

from sgn_lab.datamodel import GroundTruth, NodeDataSpec, Problem
from sgn_lab.graph import complete


def scalar_problem(N=2, sigma2=1.0, lam=0.0, mu=1.0, alpha_hat=None, w_star=0.0):
    nodes = [NodeDataSpec(i, [[1.0]], sigma2, [lam], mu, None if alpha_hat is None else alpha_hat[i])
             for i in range(N)]
    return Problem(nodes, GroundTruth([w_star]))


def random_problem(rng, N=5, m=4, p=3, noise=True):
    nodes = [NodeDataSpec(i, rng.normal(size=(m, p)), (0.5 + rng.random()) if noise else 1e-300,
                          (0.3 + 0.5 * rng.random(m)) if noise else np.zeros(m), 1 + rng.random())
             for i in range(N)]
    return Problem(nodes, GroundTruth(rng.normal(size=p)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small(rng):
    return random_problem(rng), complete(5)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
