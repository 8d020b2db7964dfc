import numpy as np
import pytest

from difflinalg import kernels


@pytest.fixture(params=["reference", "lapack"])
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def lapack():
    with kernels.use_backend("lapack"):
        yield "lapack"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion_report(request):
    """``report(number, passed, detail)`` records one acceptance criterion line."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
