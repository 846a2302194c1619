import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""
    def record(number, name, passed, detail=""):
        """``passed`` is True, False, or None for a skipped criterion."""
        ACCEPTANCE_RESULTS.append((number, name, passed, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: (r[0], r[1])):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"[{status}] {number}. {name}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
