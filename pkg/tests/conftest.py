import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qrestore.calibration import Calibration, QualityContext, calibrate
from qrestore.corpus import pristine_crops

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CALIBRATION_SIZE = 100
CALIBRATION_SEED = 100

# one line per acceptance criterion, filled by test_acceptance and printed at the end of the run
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def calibration(tmp_path_factory) -> Calibration:
    """Fitted once per session on crops disjoint from every held-out draw."""
    cached = os.environ.get("QRESTORE_TEST_CALIBRATION")
    if cached and os.path.isfile(cached):
        return Calibration.load(cached)
    imgs = [img for _, img in pristine_crops(CALIBRATION_SIZE, seed=CALIBRATION_SEED)]
    cal = calibrate(imgs, seed=0)
    path = tmp_path_factory.mktemp("cal") / "calibration.json"
    cal.save(path)
    return Calibration.load(path)


@pytest.fixture(scope="session")
def calibration_path(calibration, tmp_path_factory):
    path = tmp_path_factory.mktemp("calfile") / "calibration.json"
    calibration.save(path)
    return path


@pytest.fixture(scope="session")
def ctx(calibration) -> QualityContext:
    return QualityContext(calibration)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_crops():
    return [img for _, img in pristine_crops(6, size=64, seed=3)]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
