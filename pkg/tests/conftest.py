import pytest

from impulselab import catalog

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def ou_problem():
    return catalog.get_problem("ou")


@pytest.fixture(scope="session")
def ou_solution(ou_problem):
    from impulselab.problem import solve_oracle
    return solve_oracle(ou_problem.model, ou_problem.reward)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
