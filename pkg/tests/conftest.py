import numpy as np
import pytest

from clsprint.grid import Grid


def periodic_grid(n=32, length=1.0):
    tags = {s: "periodic" for s in ("left", "right", "bottom", "top")}
    return Grid((n, n), (length / n, length / n), boundary_tags=tags)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


#: one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
