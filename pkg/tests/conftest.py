import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, scale=1.0, jitter=0.1):
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T / n + jitter * np.eye(n))
