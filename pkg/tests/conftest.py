import pytest

from bnnood import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile any jitted kernels once so timed tests measure math, not the JIT
    kernels.warmup()
