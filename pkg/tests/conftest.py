import math

import numpy as np
import pytest
from hypothesis import settings

from brwpolymer import model as M
from brwpolymer import walk as W

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

LN2 = math.log(2.0)


@pytest.fixture
def bg():
    return M.binary_gaussian()


@pytest.fixture
def toy():
    return M.lattice_toy_model()


@pytest.fixture
def toy_table():
    return W.lattice_renewal_table(60)


@pytest.fixture(scope="session")
def bg_table():
    """Renewal table of the binary Gaussian walk, estimated once per session."""
    u = np.round(np.arange(0.0, 12.0 + 1e-9, 0.1), 10)
    return W.estimate_renewal(M.binary_gaussian(), u, 20000, 2**18, np.random.default_rng(11))
