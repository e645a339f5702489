import pytest

_LINES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    verdict = dict(item.user_properties).get("verdict")
    if verdict is None:
        verdict = "PASS" if rep.passed else "FAIL"
    _LINES[n] = f"criterion {n}: {verdict}  {detail}".rstrip()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
