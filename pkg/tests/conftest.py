import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dgc.examples import build_netflow_spec  # noqa: E402
from dgc.pipeline import solve_golne  # noqa: E402


@pytest.fixture(scope="session")
def netflow_spec():
    return build_netflow_spec()


@pytest.fixture(scope="session")
def netflow_result(netflow_spec):
    return solve_golne(netflow_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from gamegen import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
