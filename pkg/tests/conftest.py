import numpy as np
import pytest

from multistage_mi import amputation, dgp
from multistage_mi.numerics import RngStream


@pytest.fixture
def rng():
    return RngStream(20240611, (0,))


@pytest.fixture
def incomplete_sample():
    """Scenario 11, n=425, 20% non-monotone missing cells."""
    root = RngStream(99, (1,))
    full = dgp.generate(dgp.scenario(11), 425, root.child(0))
    return amputation.amputate(full, amputation.calibrate("nonmonotone"), root.child(1))


@pytest.fixture
def monotone_sample():
    root = RngStream(99, (2,))
    full = dgp.generate(dgp.scenario(6), 425, root.child(0))
    return amputation.amputate(full, amputation.calibrate("monotone"), root.child(1))


def sample_corr(x):
    return np.corrcoef(x, rowvar=False)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_report(request):
    """Append one status line per acceptance criterion."""
    return request.config.stash[_ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
