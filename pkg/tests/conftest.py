import os
import pathlib
import sys
import warnings

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from catgen.learners import LearnerSpec  # noqa: E402
from catgen.simulation import DgpSpec, generate_cohort  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "src", "catgen", "fixtures")


@pytest.fixture
def fixture_dir():
    return pathlib.Path(FIXTURES).resolve()


@pytest.fixture
def fast_library():
    return [LearnerSpec("glm_main_effects"), LearnerSpec("ridge_poly2")]


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(DgpSpec("continuous", n=400, n_s1_target=200), seed=11)


@pytest.fixture(scope="session")
def small_binary_cohort():
    return generate_cohort(DgpSpec("binary", n=400, n_s1_target=200), seed=12)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def pytest_terminal_summary(terminalreporter):
    """Print the Monte Carlo metrics recorded by the acceptance tests."""
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", None) != "call":
                continue
            for name, value in report.user_properties:
                if name == "metrics":
                    lines.append(f"{report.nodeid.split('::')[-1]} [{outcome}]: {value}")
    if lines:
        terminalreporter.write_sep("-", "acceptance metrics")
        for line in lines:
            terminalreporter.write_line(line)
