import logging

import numpy as np
import pytest

from collision_uq import mixture


@pytest.fixture(autouse=True)
def _quiet_package_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="collision_uq")


@pytest.fixture(scope="session")
def scenario_a3():
    return mixture.scenario_a(3)


@pytest.fixture(scope="session")
def scenario_a3_truth(scenario_a3):
    """Collision matrix of scenario A (K=3) from 10^6 draws per class."""
    return mixture.true_collision_matrix(scenario_a3, mc_samples=1_000_000, seed=12345)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_dominant_doubly_stochastic(K, rng, min_diag=0.6):
    """Symmetric, non-negative, doubly stochastic, diagonal >= min_diag."""
    A = rng.random((K, K))
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 0.0)
    A *= rng.uniform(0.05, 1.0 - min_diag) / A.sum(axis=1).max()
    return A + np.diag(1.0 - A.sum(axis=1))


ACCEPTANCE_LINES: list[str] = []


class AcceptanceRecorder:
    """Prints one PASS/FAIL line per acceptance criterion, then asserts it."""

    def check(self, number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
