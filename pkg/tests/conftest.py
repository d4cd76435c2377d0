import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cropcat.signal_core import Trial  # noqa: E402

_ACCEPTANCE_LINES = []


def make_trial(C=4, T=8, label=0, subject=0, seed=0):
    rng = np.random.default_rng(seed)
    return Trial(rng.standard_normal((C, T)), subject, label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def report(criterion, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append(f"[{status}] criterion {criterion}: {detail}")
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
