import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from ptrom.kernel import ParticleSystem

settings.register_profile(
    "ptrom", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ptrom")

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_system(rng, n, delta_k=0.05, spread=1.0, inflow=False):
    x = rng.uniform(-spread, spread, 2 * n)
    gamma = rng.uniform(-2.0, 2.0, n)
    flow = rng.normal(size=2 * n) if inflow else None
    return x, ParticleSystem(gamma, delta_k, inflow=flow)


@st.composite
def systems(draw, min_n=2, max_n=12, delta_min=1e-3):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    delta = draw(st.floats(delta_min, 1.0))
    rng = np.random.default_rng(seed)
    return random_system(rng, n, delta_k=delta)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
