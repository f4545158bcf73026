"""Per-criterion pass/fail summary for tests marked ``criterion(n)``."""

from collections import defaultdict

import pytest

_outcomes = defaultdict(list)
_details = defaultdict(list)


def pytest_collection_modifyitems(items):
    # gate tests summarise other tests of the session, so they run last
    items.sort(key=lambda item: item.get_closest_marker("gate") is not None)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    report.criteria = [m.args[0] for m in item.iter_markers("criterion")]


def pytest_runtest_logreport(report):
    marks = getattr(report, "criteria", None)
    if not marks:
        return
    # one entry per test: the call phase, or a failing/skipped setup or teardown
    if report.when == "call" or report.outcome != "passed":
        for n in marks:
            _outcomes[n].append(report.outcome)
            _details[n].extend(v for k, v in report.user_properties if k == "criterion_line")


@pytest.fixture
def criterion_outcomes():
    """Outcomes of the criterion-marked tests run so far in this session."""
    return _outcomes


def pytest_terminal_summary(terminalreporter):
    if not _details and not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(set(_outcomes) | set(_details)):
        results = _outcomes[n]
        failed = sum(r == "failed" for r in results)
        skipped = sum(r == "skipped" for r in results)
        status = "FAIL" if failed else ("SKIP" if results and skipped == len(results) else "PASS")
        terminalreporter.write_line(
            f"criterion {n}: {status} ({len(results) - failed - skipped} passed, {failed} failed, "
            f"{skipped} skipped)")
        for line in _details[n]:
            terminalreporter.write_line(f"    {line}")
