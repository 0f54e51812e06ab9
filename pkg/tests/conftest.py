import os

import numpy as np
import pytest

from cpwloss.geometry import CpwGeometry, build_cross_section
from cpwloss.mesh import RefinementPolicy, generate_mesh
from cpwloss.solver import solve_electrostatic, standard_permittivities

os.environ.setdefault("MPLBACKEND", "Agg")

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append ``(criterion, passed, detail)`` tuples; echoed in the terminal summary."""
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(lines, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


# small trenched CPW used by the unit tests; fast to mesh and solve
@pytest.fixture(scope="session")
def small_geom():
    return CpwGeometry(2.0, 1.0, 0.3, 100.0, t_metal=0.1)


@pytest.fixture(scope="session")
def fast_policy():
    return RefinementPolicy(h_max=4.0, h_edge=0.02, grading=1.5)


@pytest.fixture(scope="session")
def small_mesh(small_geom, fast_policy):
    return generate_mesh(build_cross_section(small_geom), fast_policy)


@pytest.fixture(scope="session")
def small_solution(small_mesh, small_geom):
    return solve_electrostatic(small_mesh, standard_permittivities(small_geom.eps_substrate))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
