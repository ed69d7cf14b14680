from pathlib import Path

import pytest

from stoplab.modelio import fixture_a, fixture_b, fixture_c

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def fix_a():
    return fixture_a()


@pytest.fixture
def fix_b():
    return fixture_b()


@pytest.fixture
def fix_c():
    return fixture_c()


@pytest.fixture
def fixture_dir():
    return FIXTURE_DIR


_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, passed, detail)``."""

    def record(name: str, passed: bool, detail: str = "") -> None:
        _CRITERIA.append((name, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
