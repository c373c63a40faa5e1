import numpy as np
import pytest

from wigtomo import enumerate_basis, ideal_w_state, pi_angles


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def basis31():
    return enumerate_basis(3, 1)


@pytest.fixture(scope="session")
def w3():
    return ideal_w_state(3)


@pytest.fixture(scope="session")
def angles3():
    return pi_angles(3)
