import numpy as np
import pytest

from riskaverse.catalog import diffusion_function, drift_function
from riskaverse.sde import DiffusionModel


def const(value):
    return {"kind": "constant", "value": value}


def scalar_model(drift=None, sigma=1.0, box=(0.0, 0.0), **kwargs):
    """One-dimensional state, one agent with a scalar control box."""
    drift = drift or const([0.0])
    return DiffusionModel(1, [([box[0]], [box[1]])], drift_function(drift, 1, 1),
                          diffusion_function(const([[sigma]]), 1, 1), **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
