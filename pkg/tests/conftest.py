import numpy as np
import pytest

from mtglm import PenaltySpec, RhoFunction, cached_table
from mtglm.robust_loss import MtObjective


@pytest.fixture(scope="session")
def quartic():
    return RhoFunction()


@pytest.fixture(scope="session")
def quartic_table(quartic):
    return cached_table(quartic)


@pytest.fixture(scope="session")
def square_table():
    return cached_table(RhoFunction.square())


def poisson_data(n, p, seed, beta=None):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    if beta is None:
        beta = np.zeros(p + 1)
        beta[0] = 0.5
        beta[1] = 0.8
    y = rng.poisson(np.exp(X @ beta)).astype(float)
    return X, y


def mt_objective(X, y, rho=None, spec=None):
    rho = rho or RhoFunction()
    return MtObjective(X, y, cached_table(rho), rho, spec)


@pytest.fixture
def make_data():
    return poisson_data


@pytest.fixture
def make_obj():
    return mt_objective


def lasso(lam):
    return PenaltySpec("lasso", lam)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
