import numpy as np
import pytest

from multiswing.contracts import take_or_pay
from multiswing.market import ONE_FACTOR, THREE_FACTOR, FactorModel


@pytest.fixture
def one_factor():
    return FactorModel.uniform(**ONE_FACTOR, n_dates=30)


@pytest.fixture
def three_factor():
    return FactorModel.uniform(**THREE_FACTOR, n_dates=30)


@pytest.fixture
def base_contract():
    return take_or_pay(20.0, 0, 1, 20, 25, 30)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ----------------------------------------------------- acceptance summary
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        measured = dict(item.user_properties).get("measured", "")
        _CRITERIA[item.nodeid] = (mark.args[0], status, measured)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, measured in _CRITERIA.values():
        line = f"{status}  {label}"
        terminalreporter.write_line(f"{line}  [{measured}]" if measured else line)
