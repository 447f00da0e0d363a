import numpy as np
import pytest

from aperture_qn import build_operators, case_from_groups

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def mid_ops():
    """A mid-box case on a 15-cell mesh."""
    return build_operators(case_from_groups(1e-3, 1e-3, 15))


@pytest.fixture
def small_ops():
    """Four cells at very low viscosity, where nonphysical roots exist."""
    return build_operators(case_from_groups(1e-17, 1e-5, 4))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
