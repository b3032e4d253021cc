import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    if rep.skipped:
        status = "SKIP"
    elif rep.failed:
        status = "FAIL"
    elif rep.when == "call":
        status = "PASS"
    else:
        return
    detail = getattr(item, "acceptance_detail", "")
    ACCEPTANCE_LINES[number] = f"criterion {number} [{status}] {title}" + (f": {detail}" if detail else "")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
