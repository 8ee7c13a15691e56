import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


def random_config(rng, n, scale=1.0, min_gap=0.05):
    g = rng.uniform(min_gap, 1.0, n - 1)
    x = np.concatenate([[0.0], np.cumsum(g)])
    x = scale * x / max(1.0, x[-1])
    return x - x.mean()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def record(criterion, ok, detail):
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
