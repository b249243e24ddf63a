"""Collects acceptance verdicts and prints them once at the end of the run."""
import pytest

_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """``verdict(criterion, ok, detail)`` records one PASS/FAIL line and returns ``ok``."""

    def record(criterion, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        _VERDICTS.append((criterion, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(line)
