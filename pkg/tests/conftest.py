"""Shared pytest setup: one summary line per acceptance criterion."""

import pytest

_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, description): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, description = marker.args
    passed = call.excinfo is None or call.excinfo.errisinstance(pytest.skip.Exception)
    prev = _OUTCOMES.get(number, (description, True))
    _OUTCOMES[number] = (description, prev[1] and passed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        description, passed = _OUTCOMES[number]
        terminalreporter.write_line(f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {description}")
