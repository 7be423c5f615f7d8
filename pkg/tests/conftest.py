from __future__ import annotations

import numpy as np
import pytest

from lolnmpc.params import default_params

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def params():
    return default_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit_quat(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
