"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

VERDICTS: dict = {}


@pytest.fixture
def verdict():
    """``verdict(n, passed, detail)`` records and prints the line for criterion ``n``."""

    def record(n: int, passed: bool, detail: str = "") -> bool:
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        VERDICTS[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
