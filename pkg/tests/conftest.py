import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from obflow.diagnostics import random_symmetric_field  # noqa: E402
from obflow.grid import DIM, GridSpec, MetricField  # noqa: E402


def identity(grid):
    vals = np.zeros((DIM, DIM) + grid.shape)
    for i in range(DIM):
        vals[i, i] = 1.0
    return vals


def random_metric(grid, seed, amplitude=0.1, max_mode=1):
    """``delta + amplitude * H`` with a band-limited random symmetric ``H``."""
    H = random_symmetric_field(grid, np.random.default_rng(seed), max_mode)
    return MetricField(grid, identity(grid) + amplitude * H)


def conformal_metric(grid, amplitude=0.1, axis=0):
    x = grid.coords()
    u = amplitude * np.sin(x[axis]) + np.zeros(grid.shape)
    return MetricField(grid, identity(grid) * np.exp(2 * u))


@pytest.fixture
def grid3():
    return GridSpec.uniform(12, active=(0, 1, 2))


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
