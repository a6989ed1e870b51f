from __future__ import annotations

import pytest

# criterion number -> (passed, detail), filled in by tests/test_acceptance.py
VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> None:
        VERDICTS[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        passed, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
