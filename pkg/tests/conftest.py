import numpy as np
import pytest

from necrostrip.model import flat_stationary, validate_params

P0 = dict(sigma_hat=1.0, sigma_tilde=2.0, sigma_bar=6.0, mu=1.0, nu=1.0, gamma=1.0)

# lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def p0():
    return validate_params(**P0)


@pytest.fixture(scope="session")
def fs0(p0):
    return flat_stationary(p0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
