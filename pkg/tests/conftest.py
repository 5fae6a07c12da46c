import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_simplex(rng, n, d):
    return rng.dirichlet(np.ones(d), size=n)
