import numpy as np
import pytest

from owvis import numerics as nx
from owvis.rng import SplitMix64


@pytest.fixture(autouse=True)
def _precision64():
    """Tests run in 64-bit mode unless they opt into float32 themselves."""
    with nx.precision("float64"):
        yield


@pytest.fixture
def rng():
    return SplitMix64(1234)


def assert_bitwise(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape and a.dtype == b.dtype
    assert a.tobytes() == b.tobytes()


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
