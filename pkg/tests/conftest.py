import pytest

_acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collector for one PASS/FAIL line per acceptance check; the lines are
    echoed in the terminal summary so they survive output capture."""
    return _acceptance_lines.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
