from collections import OrderedDict

import numpy as np
import pytest

from calgate import calibration as cal
from calgate import synth
from calgate.datamodel import split_by_stream

_criteria: "OrderedDict[int, dict]" = OrderedDict()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "tests": 0})
    entry["tests"] += 1
    entry["ok"] = entry["ok"] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"[{status}] AC{number:02d} {entry['title']} ({entry['tests']} checks)")


@pytest.fixture(scope="session")
def fixture_ds():
    return synth.generate_uncalibrated_fixture(0)


@pytest.fixture(scope="session")
def fixture_split(fixture_ds):
    _, val, test = split_by_stream(fixture_ds, (0.0, 0.5, 0.5), seed=0)
    return val, test


@pytest.fixture(scope="session")
def fitted_maps(fixture_split):
    val, _ = fixture_split
    return {
        "identity": cal.IdentityMap(),
        "temperature": cal.fit_temperature(val),
        "platt": cal.fit_platt(val),
        "isotonic": cal.fit_isotonic(val),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
