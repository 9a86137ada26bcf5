import pytest

from gpconsist.rng import RngContract

# fixed once for the whole suite
SEED = 20261016


@pytest.fixture
def contract():
    return RngContract(SEED)


@pytest.fixture
def gen():
    return RngContract(SEED).child("unit").generator()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
