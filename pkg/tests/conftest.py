import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def detail(request):
    """Collects a one-line measurement shown next to the criterion verdict."""
    notes = []
    request.node.user_properties.append(("detail", notes))
    return notes.append


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    if report.when == "call" or report.failed:
        notes = dict(report.user_properties).get("detail", [])
        _RESULTS[mark] = (report.passed, "; ".join(notes))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = m.args


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (num, title), (ok, note) in sorted(_RESULTS.items()):
        line = f"{'PASS' if ok else 'FAIL'} criterion {num:2d} {title}"
        tr.write_line(line + (f": {note}" if note else ""))
    tr.write_line(f"{sum(ok for ok, _ in _RESULTS.values())}/{len(_RESULTS)} criteria passed")
