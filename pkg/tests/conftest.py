import numpy as np
import pytest

from rsalab.problems import Composite, NoisyOracle, QuadraticProblem, generate_nonlinear, generate_quadratic


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture(scope="session")
def quad():
    return generate_quadratic(4, 6, 1.0, 2.0, seed=3)


@pytest.fixture(scope="session")
def noisy_quad():
    return generate_quadratic(5, 10, 0.5, 2.0, seed=1, noise=NoisyOracle(bound=1.0))


@pytest.fixture(scope="session")
def nonlin_l1():
    return generate_nonlinear(4, 6, 1.0, 2.0, seed=5, composite=Composite("l1", 0.1))


@pytest.fixture(scope="session")
def tiny_quad():
    """d = 1, N = 2: f_1 = x^2/2 + x and f_2 = 3x^2/2 - x, so x* = 0."""
    return QuadraticProblem.from_terms(np.array([[[1.0]], [[3.0]]]), a=np.array([[1.0], [-1.0]]))


# one line per acceptance criterion, appended by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
