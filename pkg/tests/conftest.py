import math

import numpy as np
import pytest

from cimbnn.data_io import synthetic_split
from cimbnn.nn.arch import tiny
from cimbnn.trainer import TrainConfig, train
from cimbnn.variation import CellCharacterization

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        crit = getattr(report, "criterion", None)
        if crit is not None:
            _CRITERIA[crit] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for (number, title), outcome in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {number:>2}: {word.get(outcome, outcome.upper())}  {title}")


def harsh_characterization(sigma=0.6, v_wl=0.5, v_bl=0.2):
    """Log-normal cells with a 10 uA / 2.5 uA median pair; sigma 0.6 gives a weight std of about 1.2."""
    return CellCharacterization(v_wl, v_bl, math.log(10.0), sigma, math.log(2.5), 1.5 * sigma)


@pytest.fixture(scope="session")
def synthetic_data():
    return synthetic_split(2000, 500, shape=(3, 8, 8), seed=0, noise=0.4)


@pytest.fixture(scope="session")
def trained_tiny(synthetic_data):
    """A small variation-unaware model shared by read-only tests."""
    tr, _ = synthetic_data
    return train(TrainConfig(epochs=6, array_size=16, batch_size=64, seed=3), tiny(), tr).model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
