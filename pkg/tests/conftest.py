import pytest

from loopsim.data import synthesize


@pytest.fixture(scope="session")
def ds506():
    """The 506x13 synthetic stand-in used by most seeded regression tests."""
    return synthesize(506, 13, 0.2, 1)


@pytest.fixture(scope="session")
def ds200():
    return synthesize(200, 5, 0.1, 3)
