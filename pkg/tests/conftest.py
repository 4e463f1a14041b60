import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", deadline=None, max_examples=50)
settings.load_profile("ci")

FULL = os.environ.get("SOCIS_FULL", "") not in ("", "0")

#: Mean overshoot of a discretely monitored Brownian path past a flat
#: boundary, in units of sigma * sqrt(dt) (Siegmund's constant).
OVERSHOOT = 0.5825971579390106


@pytest.fixture
def e1():
    def make(r, dim):
        x = np.zeros(dim)
        x[0] = r
        return x
    return make


#: criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE = {}


def record(n, passed, detail):
    ok, prev = ACCEPTANCE.get(n, (True, ""))
    ACCEPTANCE[n] = (ok and bool(passed), f"{prev}; {detail}" if prev else detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
