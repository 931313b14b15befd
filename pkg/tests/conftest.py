import pytest

_VERDICTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid): acceptance criterion identifier")


@pytest.fixture
def detail(request) -> dict:
    """Acceptance tests put a one-line ``summary`` of their measurements here."""
    d: dict = {}
    request.node.criterion_detail = d
    return d


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    summary = getattr(item, "criterion_detail", {}).get("summary", "")
    if rep.failed and call.excinfo is not None and not summary:
        summary = call.excinfo.exconly().splitlines()[0][:160]
    _VERDICTS[str(marker.args[0])] = ("PASS" if rep.passed else "FAIL", summary)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)
    for cid in sorted(_VERDICTS, key=key):
        verdict, summary = _VERDICTS[cid]
        terminalreporter.write_line(f"criterion {cid:<3} {verdict}  {summary}")
