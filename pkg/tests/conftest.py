import numpy as np
import pytest

from setseq import kernels
from setseq.sim import SimConfig, simulate


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def small_config():
    return SimConfig(m_units=60, t_periods=40, seed=17)


@pytest.fixture(scope="session")
def small_episodes(small_config):
    return [simulate(small_config, episode=i) for i in range(6)]


@pytest.fixture(scope="session")
def default_episode():
    # one full-size draw shared across modules (simulation is deterministic)
    return simulate(SimConfig(seed=3), episode=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from tests.test_acceptance import RESULTS
    except Exception:
        try:
            from test_acceptance import RESULTS
        except Exception:
            return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in RESULTS:
        terminalreporter.write_line(
            f"[{criterion}] {'PASS' if passed else 'FAIL'} - {detail}")
