import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nvcavity.geometry import MM, default_geometry, hollow_geometry, rasterize
from nvcavity.modesolver import NV_MODE, calibrate_geometry, select_mode, solve_te0_modes

# Permittivity that puts TE0,1,3 at 2.7 GHz on the 0.25 mm grid (frozen from a
# single-anchor calibration run; the fixture re-derives it from the default).
CALIBRATED_EPS = 185.97025669000627


@pytest.fixture(scope="session")
def calibrated_geometry():
    result = calibrate_geometry(default_geometry(), [((1, 3), 2.7e9)], ["relative_permittivity"])
    return result.geometry


@pytest.fixture(scope="session")
def calibrated_modes(calibrated_geometry):
    return solve_te0_modes(calibrated_geometry, 0.25 * MM, 6)


@pytest.fixture(scope="session")
def te013(calibrated_modes):
    mode = select_mode(calibrated_modes, NV_MODE)
    assert mode is not None
    return mode


@pytest.fixture(scope="session")
def default_grid():
    return rasterize(default_geometry(), 0.25 * MM)


@pytest.fixture(scope="session")
def hollow_modes():
    return solve_te0_modes(hollow_geometry(), 0.25 * MM, 5, window=(10e9, 30e9))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
