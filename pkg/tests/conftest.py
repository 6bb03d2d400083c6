import numpy as np
import pytest

from bctoeplitz.forward_solver import SimGrid, VelocityField


@pytest.fixture(scope="session")
def grid():
    return SimGrid.create((0.0, 1.0), 1.0, 0.05)


@pytest.fixture(scope="session")
def rho1(grid):
    return VelocityField.constant(grid)


@pytest.fixture(scope="session")
def rho_anomaly(grid):
    return VelocityField.from_function(
        grid, lambda X, Y: 1.0 + 0.3 * np.exp(-((X - 0.5) ** 2 + (Y - 0.6) ** 2) / 0.1))


def pulse(width=0.1, center=0.5, sx=0.12, t0=None):
    """Smooth space-time pulse on sigma, centred at ``t0`` (default ``5 width``)."""
    t0 = 5 * width if t0 is None else t0
    return lambda X, t: np.exp(-(((X - center) / sx) ** 2)) * np.exp(-(((t - t0) / width) ** 2))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
