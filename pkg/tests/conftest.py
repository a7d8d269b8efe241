import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def nominal_solution():
    from descentdiff.scvx import scvx_solve
    from descentdiff.trajectory import nominal_problem

    problem = nominal_problem()
    return problem, scvx_solve(problem)


def pytest_terminal_summary(terminalreporter):
    import sys

    desk = sys.modules.get("desk")
    if desk is None or not desk.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(desk.RESULTS):
        terminalreporter.write_line(desk.RESULTS[criterion])
