import numpy as np
import pytest

from latscat.scatterer import Shape, ScattererSpec, build_cell
from latscat.finite_solver import WaveParams, solve_finite


@pytest.fixture(scope="session")
def disk_spec():
    return ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1.0)])


@pytest.fixture(scope="session")
def disk5_spec():
    return ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 5.0)])


@pytest.fixture(scope="session")
def wave():
    return WaveParams(3.0, 0.5)


@pytest.fixture(scope="session")
def disk_grid16(disk_spec):
    return build_cell(disk_spec, (16, 16))


@pytest.fixture(scope="session")
def sol_N1(disk_grid16, wave):
    return solve_finite(disk_grid16, wave, 1)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
