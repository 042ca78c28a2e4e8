import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from caplearn.lipm import LipmParams, StepTiming  # noqa: E402
from caplearn.tvr import TvrGains  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def draco():
    return LipmParams(h=0.93, l_max=0.7)


@pytest.fixture
def draco_timing():
    return StepTiming(t_land=0.16, t_lift=0.16)


@pytest.fixture
def draco_gains():
    return TvrGains(0.22, 0.22, -0.18, -0.18)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
