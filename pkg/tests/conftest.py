import numpy as np
import pytest

from msocc.survey import MISSING


def random_history_array(rng, S, I, T, missing=0.25):
    y = (rng.random((S, I, T)) < 0.4).astype(np.int8)
    miss = rng.random((I, T)) < missing
    y[:, miss] = MISSING
    return y


def random_params(rng, S):
    from msocc.model import OccupancyParams

    psi = rng.dirichlet(np.ones(2**S))
    psi = np.maximum(psi, 1e-3)
    psi /= psi.sum()
    return OccupancyParams(psi, rng.uniform(0.1, 0.9, S))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria record their verdicts here; printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
