import numpy as np
import pytest

from fedsgd_dp.data import make_synthetic_dataset, partition_noniid, scale_to_unit_ball


@pytest.fixture(scope="session")
def blobs():
    return scale_to_unit_ball(make_synthetic_dataset(600, 4, 10, 3.0, seed=11))


@pytest.fixture(scope="session")
def partition(blobs):
    return partition_noniid(blobs, 10, 2, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
