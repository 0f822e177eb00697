import pytest

from evlab.eos import make_eos
from evlab.steady_state import solve


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: the acceptance criteria run")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    lines = [test_acceptance.RESULTS[k] for k in sorted(test_acceptance.RESULTS)]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def poly2():
    return make_eos("polytrope", 2.0)


@pytest.fixture(scope="session")
def state(poly2):
    """Default background: k = 2, gamma = 0.02, nu_ring = -0.2."""
    return solve(poly2, 0.02, -0.2)
