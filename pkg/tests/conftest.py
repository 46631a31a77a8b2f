import os

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def _report(criterion, ok, detail=""):
        ACCEPTANCE_LINES.append(f"{criterion:<4} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return _report


def pytest_collection_modifyitems(config, items):
    if os.environ.get("FSS_STRETCH") == "1":
        return
    skip = pytest.mark.skip(reason="overnight run; set FSS_STRETCH=1")
    for item in items:
        if "stretch" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
