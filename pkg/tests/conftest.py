import numpy as np
import pytest
from hypothesis import settings

from patrecon.geometry import AcousticConfig, ImageGrid, make_sensor_ring, make_shepp_logan

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# small geometry used across modules: every TOF fits in the record
SMALL_CFG = AcousticConfig(vs=1500.0, dt=130e-9, nt=256, f_lo=0.1e6, f_hi=20e6)


@pytest.fixture
def small_cfg():
    return SMALL_CFG


@pytest.fixture
def small_grid():
    return ImageGrid(12, 12, 0.03)


@pytest.fixture
def small_ring():
    return make_sensor_ring(0.0225, 16)


@pytest.fixture
def desk_phantom():
    return make_shepp_logan(32, 32, 0.03)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, shown after the run whatever the capture mode
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
