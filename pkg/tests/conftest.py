import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from gmwb import Contract, level_grid, reference_params  # noqa: E402


@pytest.fixture(scope="session")
def contract5():
    return Contract.standard(5.0)


@pytest.fixture(scope="session")
def grid0(contract5):
    return level_grid(0, contract5)


@pytest.fixture(scope="session")
def merton():
    return reference_params("merton", 0.2)


@pytest.fixture(scope="session")
def kou():
    return reference_params("kou", -0.2)


VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
