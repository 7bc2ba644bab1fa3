import numpy as np
import pytest

from coldse.schedule import Schedule, make_cosine_schedule


@pytest.fixture
def cosine50():
    return make_cosine_schedule(50, 0.008)


@pytest.fixture
def halves():
    """alpha = {1, 0.5, 0}: the hand-worked two-step table."""
    return Schedule.from_alphas([1.0, 0.5, 0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance_lines(request):
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
