import warnings

import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion_report():
    """Record and print one pass/fail line per acceptance criterion."""

    def report(number, name, ok):
        line = f"criterion {number} ({name}): {'PASS' if ok else 'FAIL'}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return bool(ok)

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
