import numpy as np
import pytest

from tcs_mfd.mfd import SpeedFunction
from tcs_mfd.population import PopulationSpec

V_FREE = 9.78 * 60.0


@pytest.fixture
def speed():
    return SpeedFunction()


@pytest.fixture
def small_spec():
    return PopulationSpec(n_travelers=300, seed=7)


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
