import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

# fixed example order so repeated runs exercise the same cases
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_TOTAL = 10


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_TOTAL + 1):
        if n not in ACCEPTANCE:
            tr.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        passed, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
