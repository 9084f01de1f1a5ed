import numpy as np
import pytest

from hofmn.model import init_model
from hofmn.testbeds import linear_testbed


@pytest.fixture(scope="session")
def linear_bed():
    """Random linear classifier (d=20, Y=4) with 100 samples and their exact minima."""
    return linear_testbed(seed=0, n=100)


@pytest.fixture
def mlp():
    return init_model((4, 8, 3), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def away_from_kinks(model, rng, n, margin=1e-3, low=0.1, high=0.9):
    """Random inputs whose hidden pre-activations all stay ``margin`` away from zero."""
    from hofmn.model import _forward_cache

    out = []
    while len(out) < n:
        x = rng.uniform(low, high, size=model.input_dim)
        pre = _forward_cache(model, x[None])
        if all(np.all(np.abs(p) > margin) for p in pre[:-1]):
            out.append(x)
    return np.array(out)
