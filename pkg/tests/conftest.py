import sys

import pytest

from spinmarket.core import ModelParams
from spinmarket.skeleton import drift_field
from spinmarket.spectral import assemble_matrix


@pytest.fixture(scope="session")
def params_10_3():
    return ModelParams(10, 3)


@pytest.fixture(scope="session")
def matrix_10_3(params_10_3):
    return assemble_matrix(params_10_3)


@pytest.fixture(scope="session")
def field_10_3(params_10_3):
    return drift_field(params_10_3)


@pytest.fixture(scope="session")
def matrix_3_6():
    return assemble_matrix(ModelParams(3, 6))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
