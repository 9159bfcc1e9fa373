import re
from collections import OrderedDict

import numpy as np
import pytest

from mzcount.cli import deflate
from mzcount.io import bundled_path, ingest

_CRITERIA = {
    1: "marginal goodness-of-fit table",
    2: "fifteen intercept-only fits on the claim table",
    3: "five zero-modified fits on the deflated table",
    4: "common-shock rate collapses to zero",
    5: "monotone EM and MM traces",
    6: "engines agree with direct maximization",
    7: "analytic surrogate gradients",
    8: "closed-form moments against Monte Carlo",
    9: "joint pmf normalization",
    10: "covariate recovery",
}
_RESULTS: "OrderedDict[int, list]" = OrderedDict((k, []) for k in _CRITERIA)


@pytest.fixture(scope="session")
def claims():
    return ingest(bundled_path("claims_contingency.csv"))


@pytest.fixture(scope="session")
def deflated(claims):
    return deflate(claims, keep_count=3554, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    match = re.search(r"test_criterion_(\d+)", report.nodeid)
    if match:
        _RESULTS[int(match.group(1))].append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not any(_RESULTS.values()):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, name in _CRITERIA.items():
        runs = _RESULTS[k]
        if not runs:
            tr.write_line(f"criterion {k:2d}: NOT RUN  {name}")
            continue
        failed = [n for n, outcome in runs if outcome != "passed"]
        status = "PASS" if not failed else "FAIL"
        tr.write_line(f"criterion {k:2d}: {status}  {name} ({len(runs) - len(failed)}/{len(runs)} checks)")
        for n in failed:
            tr.write_line(f"               failed: {n}")
