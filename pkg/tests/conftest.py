import numpy as np
import pytest

from moistpe.geometry import Params, build_grid
from moistpe.operators import VectorField
from moistpe.timestepper import EllipticWorkspace, StepConfig, barotropic_projection


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(8, 16, 4)


@pytest.fixture(scope="session")
def grid():
    return build_grid(16, 32, 8)


@pytest.fixture
def params():
    return Params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_vector(rng, shape):
    return VectorField(rng.standard_normal(shape), rng.standard_normal(shape))


def constrained_vector(rng, grid):
    v = random_vector(rng, grid.shape)
    v, _ = barotropic_projection(v, 1.0, EllipticWorkspace(grid), StepConfig(dt=1.0, projection_tol=1e-14))
    return v


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one line per acceptance criterion for the terminal summary."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, ok, detail):
        store[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(store[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
