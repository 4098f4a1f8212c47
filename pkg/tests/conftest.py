import numpy as np
import pytest

from fraconc.green import Problem
from fraconc.groundstate import solve_ground_state
from fraconc.kernels import Params, build_grid
from fraconc.reduction import Reduction

L, H = 40.0, 0.05


@pytest.fixture(scope="session")
def params():
    return Params(1, 0.4, 2.0, 0.1)


@pytest.fixture(scope="session")
def grid(params):
    return build_grid(params, L, H)


@pytest.fixture(scope="session")
def ground(params, grid):
    return solve_ground_state(params, grid)


@pytest.fixture(scope="session")
def problems(params, ground):
    cache = {}

    def get(eps):
        if eps not in cache:
            cache[eps] = Problem(params.with_eps(eps), L, H, ground)
        return cache[eps]

    return get


@pytest.fixture(scope="session")
def reductions(problems):
    cache = {}

    def get(eps):
        if eps not in cache:
            cache[eps] = Reduction(problems(eps))
        return cache[eps]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
