import json
from pathlib import Path

import numpy as np
import pytest

from couette_echo.params import derive_params

ORACLES = json.loads((Path(__file__).parent / "oracles" / "oracles.json").read_text())

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.fixture(scope="session")
def oracle():
    return ORACLES


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def p8():
    return derive_params(8, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.05))


@pytest.fixture(scope="session")
def p4():
    return derive_params(4, "desk", dict(sigma=0.1, alpha=1.01, eps0=0.3))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "setup" and rep.outcome != "passed":
        status = "FAIL" if rep.failed else "SKIP"
    elif rep.when == "call":
        if hasattr(rep, "wasxfail"):
            status = "XPASS" if rep.passed else "FAIL (xfail)"
        else:
            status = "PASS" if rep.passed else "FAIL"
    else:
        return
    # a criterion passes only if every test covering it passes
    prev = _criteria.get(num)
    detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in item.user_properties)
    entry = (title, status, item.name, detail)
    if prev is None:
        _criteria[num] = [entry]
    else:
        prev.append(entry)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        for title, status, name, detail in _criteria[num]:
            word = "PASS" if status == "PASS" else "FAIL"
            extra = "" if status in ("PASS", "FAIL") else f" [{status}]"
            tr.write_line(f"{word} criterion {num:>2}: {title} ({name}){extra}")
            if detail:
                tr.write_line(f"      {detail}")
