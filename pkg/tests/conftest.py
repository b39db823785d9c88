import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from divbar import gbm  # noqa: E402
from divbar.barrier import Barrier, minimal_barrier  # noqa: E402
from divbar.model import DiffusionSpec, make_fundamental  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def gbm_spec():
    return DiffusionSpec.gbm(0.04, 0.3, 0.05)


@pytest.fixture(scope="session")
def gbm_pair(gbm_spec):
    return make_fundamental(gbm_spec)


@pytest.fixture(scope="session")
def gbm_sol():
    return gbm.solve(0.04, 0.3, 0.05)


@pytest.fixture(scope="session")
def ray_barrier(gbm_sol):
    return Barrier.ray(gbm_sol.C, 1e-3, 1e3, n=64)


@pytest.fixture(scope="session")
def gbm_minimal(gbm_pair):
    return minimal_barrier(gbm_pair, (0.1, 10.0))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
