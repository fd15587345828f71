import numpy as np
import pytest

from causalqm.fixtures import fixture_config
from causalqm.verify import series_for, simulate

#: (criterion, passed, message) lines printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number, passed, message in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {message}")


@pytest.fixture(scope="session")
def correlated():
    """Config, stored states and field series of the correlated 2D fixture."""
    cfg = fixture_config("correlated_2d")
    states = simulate(cfg)
    return cfg, states, series_for(cfg, states)


@pytest.fixture(scope="session")
def factorizable():
    cfg = fixture_config("factorizable_2d")
    states = simulate(cfg)
    return cfg, states, series_for(cfg, states)


@pytest.fixture(scope="session")
def gaussian_1d():
    cfg = fixture_config("gaussian_1d")
    states = simulate(cfg)
    return cfg, states, series_for(cfg, states)


@pytest.fixture(scope="session")
def harmonic_1d():
    cfg = fixture_config("harmonic_1d")
    states = simulate(cfg)
    return cfg, states, series_for(cfg, states)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
