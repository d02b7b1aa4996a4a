import math

import numpy as np
import pytest
from hypothesis import settings

from decolab.model import QuadQuad, SystemSpec, product_state

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

HBAR = 0.005
BETA = 0.01


def pytest_configure(config):
    config.addinivalue_line("markers", "quantum: exercises the wavefunction engine")
    config.addinivalue_line("markers", "classical: exercises the trajectory engines")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")
    config.addinivalue_line("markers", "acceptance: end-to-end checks on the preset scenarios")


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def chaotic():
    return SystemSpec(HBAR, BETA, QuadQuad(1.0))


@pytest.fixture
def integrable():
    return SystemSpec(HBAR, BETA, QuadQuad(0.03))


@pytest.fixture
def state_chaotic(chaotic):
    return product_state(chaotic, 0.4, 0.5, 0.6, energy=0.24)


@pytest.fixture
def state_integrable(integrable):
    return product_state(integrable, 0.4, 0.5, 0.6, energy=0.24)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SIGMA = math.sqrt(HBAR / 2)
