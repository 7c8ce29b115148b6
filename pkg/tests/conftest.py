import numpy as np
import pytest

from cfurllc.model import PowerBudget, generate_instance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_instance():
    return generate_instance(7, M=4, K=5, N=4)


@pytest.fixture(scope="session")
def default_instance():
    return generate_instance(1, M=16, K=20, N=9)


@pytest.fixture
def budget_of():
    return lambda inst: PowerBudget.uniform(inst)
