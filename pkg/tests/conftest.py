import math

import numpy as np
import pytest

from betafv.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(20240611, 0)


def within(est, target, se, extra=0.0, k=3.0):
    """True if ``est`` lies within ``k`` standard errors plus ``extra`` of ``target``."""
    return abs(est - target) <= k * se + extra


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / math.sqrt(x.size)


# small settings under which every CLI experiment finishes in about a second
TINY_CONFIGS = {
    "csbp_validate": "replicates = 20\ngrid_n = 3\ndelta_x = 0.01",
    "mbi_sim": "replicates = 5\nhorizon = 0.5\ntheta = 0.5\ndelta_age = 0.1",
    "fv_timechange": "replicates = 5\nhorizon = 0.3\ngrid_n = 2",
    "fv_direct": "replicates = 5\nhorizon = 0.3\ngrid_n = 2\ndelta_y = 0.01",
    "fv_crosscheck": "replicates = 10\nhorizon = 0.3\ndelta_y = 0.01",
    "lookdown_sim": "replicates = 3\nlevels = 30\ngrid_n = 4",
    "covering_sim": "replicates = 50\ngrid_n = 3\ndelta_len = 0.05",
    "shepp_check": "theta = 0.5",
    "schmuland": "replicates = 20\nthetas = 0.5,1.5",
    "main_theorem_probe": "replicates = 5\ngrid_n = 20",
    "extinction_dichotomy": "replicates = 3\nthetas = 0.3,2\nhorizon = 2",
}


def tiny_config_text(name, seed=1):
    return f"experiment = {name}\nseed = {seed}\n{TINY_CONFIGS[name]}\n"


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
