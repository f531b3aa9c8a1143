import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bilinsde import make_linear, make_triad

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=50
)
settings.load_profile("default")


@pytest.fixture
def triad():
    return make_triad()


@pytest.fixture
def triad_e1():
    return make_triad(forced_axes=(1,))


@pytest.fixture
def linear2():
    return make_linear(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
