import numpy as np
import pytest

from spinbath.spinmodel import MagneticField

ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def field_111():
    return MagneticField.from_gauss(238.8, (1, 1, 1))


@pytest.fixture(scope="session")
def gamma_d():
    return 2 * np.pi * 1e6


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
