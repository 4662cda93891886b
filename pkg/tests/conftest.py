import numpy as np
import pytest

from adaptfdr.core import ingest


def dyadic(values, denom=2 ** 20):
    """Snap p-values to multiples of 1/denom so 1 - p is exact in floats."""
    v = np.asarray(values, dtype=float)
    k = np.clip(np.round(v * denom), 1, denom - 1)
    return k / denom


def two_groups_dataset(n=300, seed=0, d=1, pi_base=-1.5, pi_slope=3.0,
                       mu_slope=2.0, exact_mirror=False):
    """Beta-mixture data with a univariate signal gradient."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, d))
    logit = pi_base + pi_slope * x[:, 0]
    pi1 = 1.0 / (1.0 + np.exp(-logit))
    truth = rng.uniform(size=n) < pi1
    mu = 1.0 + mu_slope * x[:, 0]
    u = rng.uniform(size=n)
    p = np.where(truth, u ** mu, u)
    if exact_mirror:
        p = dyadic(p)
    return ingest(p, x, truth=truth)


@pytest.fixture
def small_dataset():
    return two_groups_dataset(n=200, seed=11)
