"""Shared pytest hooks: the acceptance tests report one line per criterion."""
import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_report():
    """Call with (criterion number, passed, detail) to record the summary line."""

    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
