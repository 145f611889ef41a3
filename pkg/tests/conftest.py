import math

import pytest
from hypothesis import settings

settings.register_profile("rwrs", deadline=None, max_examples=60)
settings.load_profile("rwrs")

# escape probability of symmetric Zipf(0.6) steps, from the Fourier inversion
# q = pi / int_0^pi dtheta / (1 - phi(theta)) evaluated with mpmath at 20 digits
# (recomputed live in test_stable_walk.py::test_fourier_oracle)
Q_ZIPF_06 = 0.70198606007945288639
RETURN_MASS_ZIPF_06 = 1.0 / Q_ZIPF_06 - 1.0


@pytest.fixture
def q06():
    return Q_ZIPF_06


def within(est, target, z=3.0, extra=0.0):
    """|est.mean - target| <= z * est.stderr + extra."""
    return math.fabs(est.mean - target) <= z * est.stderr + extra


ACCEPTANCE_LINES = []


def report_criterion(number, title, ok, detail):
    line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
