import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_grid(side, height=None):
    height = side if height is None else height
    ys, xs = np.divmod(np.arange(side * height), side)
    return np.stack([xs, ys], axis=1).astype(np.float64)


# one line per acceptance criterion, collected by test_acceptance and echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
