import pytest

from fomatch import suites
from fomatch.dualfuncs import synthesize_balanced, synthesize_ewf


@pytest.fixture(scope="session")
def balanced():
    """Shipped tables from the n = 100 balanced LP."""
    return suites.default_balanced()


@pytest.fixture(scope="session")
def ewf():
    """Shipped tables from the n = 1000 EWF LP."""
    return suites.default_ewf()


@pytest.fixture(scope="session")
def small_balanced():
    funcs, _ = synthesize_balanced(16)
    return funcs


@pytest.fixture(scope="session")
def small_ewf():
    fn, _ = synthesize_ewf(40)
    return fn
