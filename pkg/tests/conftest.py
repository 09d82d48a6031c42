"""Shared test plumbing: collects acceptance-criterion verdict lines and
prints them in the terminal summary."""

import pytest

_verdicts: list[str] = []


@pytest.fixture
def criterion_report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert."""

    def report(number: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {number:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
        _verdicts.append(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_verdicts):
            terminalreporter.write_line(line)
