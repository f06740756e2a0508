import sys

import numpy as np
import pytest

from shadowcace.io import table4_dataset
from shadowcace.simulation import SimConfig, simulate_dataset

#: Published Table 5 values for the deliberation data.
PUBLISHED_THETA = (1.6204, -0.2225, 0.1249)
PUBLISHED_CACE = 1.3234


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo tests that take more than a few seconds")


@pytest.fixture(scope="session")
def table4():
    return table4_dataset()


@pytest.fixture(scope="session")
def default_config():
    return SimConfig()


@pytest.fixture(scope="session")
def sim2000(default_config):
    return simulate_dataset(default_config, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod._line(k, *mod.RESULTS[k]))
