import numpy as np
import pytest

from specunet import backends


@pytest.fixture(params=backends.available())
def backend(request):
    """Run the test once per importable kernel backend."""
    previous = backends.active().name
    backends.use(request.param)
    yield request.param
    backends.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
