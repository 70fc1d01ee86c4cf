import pytest

from fwls import kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Compile/exercise every kernel once so timing tests see steady state."""
    kernels.warm_up()
