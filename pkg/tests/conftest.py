import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def full_tier_trials():
    """10^4 oracle-backend landmark trials at the full tier, shared across test files."""
    from oracles import landmark_error_trials

    return landmark_error_trials("full", 10_000)


def pytest_terminal_summary(terminalreporter):
    results = sys.modules.get("test_acceptance")
    if results is None or not results.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results.RESULTS):
        terminalreporter.write_line(results.RESULTS[n])
