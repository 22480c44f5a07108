import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sym(rng, d, scale=1.0):
    b = rng.standard_normal((d, d)) * scale
    return 0.5 * (b + b.T)


def random_spd(rng, d, shift=0.0):
    g = rng.standard_normal((d, d))
    s = g @ g.T + shift * np.eye(d)
    return 0.5 * (s + s.T)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
