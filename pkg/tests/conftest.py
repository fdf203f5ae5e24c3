import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from delay_spectra import DelaySystem, HistoryFunction, matrix_measure

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def scalar_delay(a0, a1, h=1.0):
    """x'(t) = a0 x(t) + a1 x(t - h)."""
    return DelaySystem.point([[a0]], [([[a1]], h)])


def random_stable_one_delay(rng, n=2, h=1.0, margin=0.2):
    """Entries U[-1, 1]; A0 shifted so that kappa_2(A0) + ||A1|| = -margin."""
    A0 = rng.uniform(-1, 1, (n, n))
    A1 = rng.uniform(-1, 1, (n, n))
    shift = matrix_measure(A0) + np.linalg.norm(A1, 2) + margin
    return DelaySystem.point(A0 - shift * np.eye(n), [(A1, h)])


def ones_history(system):
    return HistoryFunction.constant(np.ones(system.n), system.h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE_RESULTS: dict = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
