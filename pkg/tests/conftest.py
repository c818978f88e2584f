import pytest

from qpgaps import arithmetic
from qpgaps.cocycle import amo_potential


@pytest.fixture(scope="session")
def golden():
    return arithmetic.golden_mean(depth=40)


@pytest.fixture(scope="session")
def amo():
    return amo_potential()
