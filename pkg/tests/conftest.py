import pytest

from sensorguide.guidance import solve_fbs
from sensorguide.scenario import reference_scenario

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def ref12():
    return reference_scenario(order=12)


@pytest.fixture(scope="session")
def ref12_solution(ref12):
    return solve_fbs(ref12)


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE[str(number)] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
            terminalreporter.write_line(ACCEPTANCE[number])
