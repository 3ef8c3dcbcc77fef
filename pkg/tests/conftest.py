import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sym_matrix(rng, k, scale=1.0):
    a = rng.normal(scale=scale, size=(k, k))
    return a + a.T


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{key:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
