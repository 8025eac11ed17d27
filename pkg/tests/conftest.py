"""Shared fixtures plus the acceptance-criterion summary printed after the run."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fhdgm.basis import BasisTriple  # noqa: E402
from fhdgm.estimation import ModelParams, make_layout, simulate  # noqa: E402

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running simulation study")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, (title, []))
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry[1].append("pass" if rep.passed else ("skip" if rep.skipped else "fail"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        if outcomes and all(o == "pass" for o in outcomes):
            status = "PASS"
        elif any(o == "fail" for o in outcomes):
            status = "FAIL"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"{status} criterion {number:>2}: {title}")


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

H5 = np.linspace(0.0, 1.0, 5)


@pytest.fixture
def bases_p2():
    return BasisTriple.bspline((0.0, 1.0), 2, p_z=2, p_beta=2, p_sigma=1)


@pytest.fixture
def truth_p2():
    return ModelParams(np.log(0.1), [2.0, -1.0], [0.7, 0.4], [1.0, 0.5], [3.0, 2.0])


def simulated(n, T, seed, bases, params, missing=0.0, covariates=("const",)):
    layout = make_layout(n, T, H5, covariates=covariates, seed=seed, missing=missing)
    return simulate(layout, bases, params, seed=seed + 1000)


@pytest.fixture
def small_fit_data(bases_p2, truth_p2):
    return simulated(8, 30, 3, bases_p2, truth_p2)
