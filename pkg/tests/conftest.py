import pytest

_CRITERIA = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        verdict = "PASS" if report.passed else "FAIL"
        _CRITERIA.append((props["criterion"], verdict, props.get("summary", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, summary in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {summary}")


@pytest.fixture
def criterion(record_property):
    """Tag an acceptance test with its criterion number and a one-line summary."""
    def tag(number, summary):
        record_property("criterion", number)
        record_property("summary", summary)
    return tag
