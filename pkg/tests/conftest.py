import time

import pytest

from rcdpt.gradcheck import run_all

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def gradcheck_timed():
    """The full float64 audit takes most of a minute, so it runs once per session."""
    t0 = time.perf_counter()
    results = run_all(seed=0)
    return results, time.perf_counter() - t0


@pytest.fixture(scope="session")
def gradcheck_results(gradcheck_timed):
    return gradcheck_timed[0]


@pytest.fixture
def acceptance():
    """Call with (number, title, passed, detail); prints the verdict line and records it for the summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
