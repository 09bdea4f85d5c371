import sys
from pathlib import Path

import pytest

from finder import backend

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable


@pytest.fixture(autouse=True)
def _reset_backend():
    """CLI --strict and explicit set_backend calls must not leak across tests."""
    yield
    backend.set_backend(None)


@pytest.fixture(params=["numpy", "numba"] if backend.HAS_NUMBA else ["numpy"])
def any_backend(request):
    """Run a test under each kernel backend."""
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(None)


@pytest.fixture
def numpy_backend():
    backend.set_backend("numpy")
    yield
    backend.set_backend(None)
