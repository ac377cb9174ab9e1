import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from lonchar.lon_core import haar_random_unitary, subunitary_from_singular_values

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@st.composite
def subunitaries(draw, min_dim=1, max_dim=5):
    m = draw(st.integers(min_dim, max_dim))
    t = draw(st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m))
    return subunitary_from_singular_values(t, draw(seeds))


@st.composite
def unitaries(draw, min_dim=1, max_dim=5):
    return haar_random_unitary(draw(st.integers(min_dim, max_dim)), draw(seeds))


def random_subunitary(m, seed, low=0.5, high=1.0):
    rng = np.random.default_rng(seed)
    return subunitary_from_singular_values(rng.uniform(low, high, m), rng)


def zscore(observed, expected, sigma):
    return abs(observed - expected) / sigma


def binomial_z(hits, n, p):
    """z-score of ``hits`` successes in ``n`` trials against probability ``p``."""
    return abs(hits - n * p) / np.sqrt(n * p * (1 - p))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
