import numpy as np
import pytest

from geodyn import flows
from geodyn.geometry import MetricField, VectorField


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pend():
    return flows.pendulum()


@pytest.fixture
def lor():
    return flows.lorenz()


@pytest.fixture
def abc_flow():
    return flows.abc()


def curved_metric() -> MetricField:
    """A non-constant Riemannian metric on R² used to exercise the Γ terms."""
    return MetricField.from_strings([["1 + x1^2/4", "x1*x2/10"], ["x1*x2/10", "2 + sin(x2)"]])


def curved_field() -> VectorField:
    return VectorField.from_strings(["-x2 + x1^2/5", "x1 + cos(x2)/3"])


def sample_box(rng, n, count, half=2.0):
    return rng.uniform(-half, half, size=(count, n))


# --------------------------------------------------------------------------- acceptance summary

import time

ACCEPTANCE: list[str] = []
_SESSION_START = time.perf_counter()


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    elapsed = time.perf_counter() - _SESSION_START
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
    terminalreporter.write_line(f"session wall time {elapsed:.1f} s (budget 60 s): "
                                f"{'PASS' if elapsed < 60 else 'FAIL'}")
