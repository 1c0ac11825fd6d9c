import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from branching_fractals.colored_branching import ColorStructureLaw  # noqa: E402
from branching_fractals.measures import MeasureVec  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale Monte Carlo runs")


@pytest.fixture
def supercritical_law():
    """mu = (1.5, 1.5); total offspring law {0: 0.25, 4: 0.75}."""
    return ColorStructureLaw.from_pairs([((0, 0), 0.25), ((2, 2), 0.75)])


@pytest.fixture
def binary_law():
    """Every individual has one child of each color."""
    return ColorStructureLaw.from_pairs([((1, 1), 1.0)])


@pytest.fixture
def half():
    return MeasureVec([0.5, 0.5])
