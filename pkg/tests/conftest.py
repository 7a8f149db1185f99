from pathlib import Path

import numpy as np
import pytest

from cesrisk.data import Dataset
from cesrisk.model import CesMeanParams, CesVarParams
from cesrisk.synth import SyntheticSpec, generate, grid_design

FIXTURES = Path(__file__).parent / "fixtures"

# field-trial style grid: 6 water levels x 9 nitrogen levels (as recorded).
WATER_LEVELS = (12.0, 18.0, 24.0, 30.0, 36.0, 42.4)
NITROGEN_LEVELS = (0.0, 40.0, 80.0, 120.0, 160.0, 200.0, 240.0, 280.0, 325.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def wheat_like_mean():
    return CesMeanParams(3.4554, 0.4094, (0.784, 0.216), [0.8805])


@pytest.fixture
def small_grid():
    return grid_design(WATER_LEVELS, NITROGEN_LEVELS, (1970, 1971), 1)


@pytest.fixture
def noisy_dataset(wheat_like_mean, small_grid):
    var = CesVarParams(2.0, -0.3, (1.04, -0.04), [0.0])
    return generate(SyntheticSpec(wheat_like_mean, var, small_grid, seed=3))


@pytest.fixture
def zero_noise_dataset(wheat_like_mean, small_grid):
    var = CesVarParams(-np.inf, 0.5, (0.5, 0.5), [0.0])
    return generate(SyntheticSpec(wheat_like_mean, var, small_grid, seed=0))


def tiny_dataset(n=10, seed=0):
    r = np.random.default_rng(seed)
    return Dataset.from_raw(
        np.repeat([1970, 1971], n // 2),
        r.uniform(10, 40, n),
        r.uniform(0, 300, n),
        r.uniform(500, 3000, n),
    )


# -- acceptance summary ------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        if rep.skipped:
            status = "SKIPPED"
            if isinstance(rep.longrepr, tuple):
                detail = rep.longrepr[2]
        else:
            status = "PASS" if rep.passed else "FAIL"
        _CRITERIA[cid] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")

    def key(c):
        digits = "".join(ch for ch in c if ch.isdigit())
        return (int(digits or 0), c)

    for cid in sorted(_CRITERIA, key=key):
        title, status, detail = _CRITERIA[cid]
        tr.write_line(f"{cid:<5} {status:<8} {title}" + (f" | {detail}" if detail else ""))
