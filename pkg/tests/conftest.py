import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wisdnav.kinematics import RobotGeometry

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def geo():
    return RobotGeometry()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if report.when == "setup":
        detail = f"setup error: {call.excinfo.typename}" if call.excinfo else detail
    verdict = "PASS" if report.passed else "FAIL"
    if report.passed and dict(item.user_properties).get("soft_fail"):
        verdict = "SOFT-FAIL"
    _ACCEPTANCE.append((marker.args[0], verdict, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    width = max(len(name) for name, _, _ in _ACCEPTANCE)
    for name, verdict, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{verdict:<9} {name:<{width}}  {detail}")
