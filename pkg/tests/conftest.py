import numpy as np
import pytest

from helpers import CONSTANT_2x2
from votetrans.tables import units_from_table

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def noiseless_units():
    """Units whose rows split exactly as CONSTANT_2x2, with varied margins."""
    rng = np.random.default_rng(11)
    rows = rng.integers(1, 60, size=(40, 2)) * 20
    return units_from_table(CONSTANT_2x2, rows)
