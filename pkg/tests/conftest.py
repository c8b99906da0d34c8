from __future__ import annotations

import math

import numpy as np
import pytest

from extremal_deformation.data_model import grid_sites


def erf_series(x: float, terms: int = 80) -> float:
    """Maclaurin series of erf, independent of scipy."""
    total = 0.0
    for n in range(terms):
        total += (-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return 2.0 / math.sqrt(math.pi) * total


def phi_oracle(x: float) -> float:
    return 0.5 * (1.0 + erf_series(x / math.sqrt(2.0)))


@pytest.fixture
def grid16():
    return grid_sites(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[str, str] = {}


def record_criterion(number: int, passed: bool | None, detail: str) -> None:
    tag = "PASS" if passed else ("WAIVED" if passed is None else "FAIL")
    line = f"criterion {number}: {tag} - {detail}"
    ACCEPTANCE_LINES[f"{number:02d}"] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
