"""Collects the one-line acceptance verdicts and prints them after the run."""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    # pytest loads this file as a top-level module while the tests import it as
    # tests.conftest, so read the list from the copy the tests appended to.
    from tests.conftest import ACCEPTANCE_LINES as lines

    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
