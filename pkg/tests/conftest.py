import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("kaclab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "kaclab"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CRITERIA = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line, then assert the verdict."""
    def report(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {name}: {detail}"
        CRITERIA.append(line)
        print(line)
        assert passed, line
    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
