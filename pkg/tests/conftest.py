import numpy as np
import pytest

from hpenergy.mesh import Mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_square():
    """Unit square split along the diagonal into two triangles."""
    return Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])


def single_triangle():
    return Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def report(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
