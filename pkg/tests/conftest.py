import numpy as np
import pytest

from finereg import geometry
from finereg.operators import build_grid

ACCEPTANCE_LINES = {}


def record(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def square():
    return geometry.DomainSpec.box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture(scope="session")
def disk():
    return geometry.DomainSpec.disk([0.0, 0.0], 1.0)


@pytest.fixture(scope="session")
def chart():
    return geometry.DomainSpec.lipschitz_graph(0.1, 1.05, lambda x: 0.5 * np.abs(x))


@pytest.fixture(scope="session")
def square32(square):
    return build_grid(square, 1 / 32)


@pytest.fixture(scope="session")
def disk64(disk):
    return build_grid(disk, 1 / 64)
