import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pra_toolkit.panel import ReturnsPanel, normalize

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_panel(N, T, seed=0, rho=0.3):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(T)
    X = np.sqrt(rho) * f + np.sqrt(1 - rho) * rng.standard_normal((N, T))
    return ReturnsPanel.from_array(X)


@pytest.fixture
def small_npanel():
    return normalize(make_panel(5, 50, seed=11))


@pytest.fixture
def medium_npanel():
    return normalize(make_panel(12, 600, seed=5))


_ACCEPTANCE = []


@pytest.fixture
def report():
    """Print and record a PASS/FAIL line per acceptance check."""

    def emit(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else "")
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
