import warnings

import pytest

from roci.trial import Margin, make_arm_grid


@pytest.fixture
def refine_grid():
    return make_arm_grid([6, 9, 12, 15, 18], control_index=0, preference="prefer_high")


@pytest.fixture
def margin():
    return Margin(0.88, 0.05)


@pytest.fixture
def two_arm_grid():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return make_arm_grid([6, 12], 0, "prefer_high")


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the acceptance summary, then assert it."""

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        print(line)
        assert ok, line

    return record
