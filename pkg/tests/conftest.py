import numpy as np
import pytest

from wgsr.physics import ArrayGeometry, FrequencyGrid, WaveguideModel
from wgsr.imaging import SearchGrid


def central_diff(f, arr, step=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr, dtype=float)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        grad.flat[i] = (up - down) / (2 * step)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


@pytest.fixture(scope="session")
def model():
    return WaveguideModel()


@pytest.fixture(scope="session")
def freqs():
    return FrequencyGrid()


@pytest.fixture(scope="session")
def array(model):
    return ArrayGeometry.uniform(model.depth, 2.5)


@pytest.fixture(scope="session")
def desk_grid():
    return SearchGrid(n_x=36, n_y=26)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
