import numpy as np
import pytest

_criteria = {}


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        ok = _criteria.get(crit, True)
        _criteria[crit] = ok and report.passed and report.when == "call"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = int(marker.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_criteria):
        status = "PASS" if _criteria[crit] else "FAIL"
        terminalreporter.write_line(f"criterion {crit:2d}: {status}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
