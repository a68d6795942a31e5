import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from almostc1.mesh import disk_mesh, mixed_mesh, structured_grid
from almostc1.space import build_space

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def disk5():
    mesh = disk_mesh(5)
    space, geo = build_space(mesh)
    return mesh, space, geo


@pytest.fixture(scope="session")
def mixed():
    mesh = mixed_mesh()
    space, geo = build_space(mesh)
    return mesh, space, geo


@pytest.fixture(scope="session")
def grid4():
    mesh = structured_grid(4)
    space, geo = build_space(mesh)
    return mesh, space, geo


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS, lines

    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines():
            terminalreporter.write_line(line)
