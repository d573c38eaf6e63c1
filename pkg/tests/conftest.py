import numpy as np
import pytest

from ebcurve import simbench


@pytest.fixture(scope="session")
def sim_main():
    return simbench.gen_main(1000, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_cohort(path, sim):
    sim.dataset().to_frame().to_csv(path, index=False)
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
