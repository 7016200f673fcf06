import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from powergnn.netsim import NetworkConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

HETNET = NetworkConfig(M_S=3, M_P=5, N_S_tx=16, N_P_tx=8, N_S=10, N_P=6)
HOMONET = NetworkConfig(M_S=10, N_S_tx=16, N_S=10)
SMALL = NetworkConfig(M_S=2, M_P=2, N_S_tx=4, N_P_tx=3, N_S=2, N_P=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data():
    from powergnn.oracle import generate_dataset
    return generate_dataset(SMALL, 40, seed=7)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance
    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.REPORT:
            terminalreporter.write_line(line)
