import numpy as np
import pytest

from varnn.data import generate_synthetic, prepare, regime_shift_spec


@pytest.fixture(scope="session")
def small_data():
    return prepare(generate_synthetic(regime_shift_spec(T=600, d=3, seed=11)), w=5)


@pytest.fixture
def rng():
    from varnn.numkit import Rng

    return Rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
