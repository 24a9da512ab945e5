import numpy as np
import pytest

from epikeedmd.koopman_linear import NominalModel
from epikeedmd.sim import DroneParams, nominal_model

ACCEPTANCE_LINES = []


@pytest.fixture
def drone_model() -> NominalModel:
    return nominal_model(DroneParams(), np.diag([10.0, 1.0]), np.eye(1))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
