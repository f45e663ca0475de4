"""Shared pytest wiring: acceptance-criterion bookkeeping.

Tests that certify a release gate carry @pytest.mark.criterion("<label>").
After the run we print one PASS/FAIL line per criterion so the gate status
is readable without grepping the dot output.
"""

import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(label): marks a test as the certifying check for one "
        "acceptance criterion; its outcome is echoed in the summary",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not mark.args:
        return
    label = mark.args[0]
    if rep.when == "call":
        _CRITERIA[label] = rep.passed
    elif rep.failed:
        # setup/teardown crash counts as a failed criterion
        _CRITERIA[label] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, ok in _CRITERIA.items():
        terminalreporter.write_line(("PASS  " if ok else "FAIL  ") + label)
