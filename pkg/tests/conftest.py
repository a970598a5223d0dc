import numpy as np
import pytest

from mlscalib.simscene import default_scanner, standard_calibration_run

# 3.6 deg azimuth step: 20x fewer firings than the default scanner, same beams
COARSE_STEP = 3.6


def coarse_scanner(range_noise=0.0):
    return default_scanner(range_noise=range_noise, azimuth_step=COARSE_STEP)


@pytest.fixture(scope="session")
def noiseless_run():
    return standard_calibration_run(7, coarse_scanner(), range_noise=0.0, injected_error=(0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def noisy_run():
    return standard_calibration_run(7, coarse_scanner(0.02))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
