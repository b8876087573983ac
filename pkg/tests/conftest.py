import numpy as np
import pytest
from hypothesis import settings

from tailcp.core import Dataset

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def make_data(n=80, p=6, seed=0, beta=None, noise=1.0, tail=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p) if beta is None else np.asarray(beta, float)
    e = rng.standard_t(tail, n) if tail else rng.standard_normal(n)
    return Dataset(X, X @ beta + noise * e)


@pytest.fixture
def small_data():
    return make_data()
