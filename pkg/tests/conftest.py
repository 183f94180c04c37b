import numpy as np
import pytest

from dqad.qnet import QNetwork


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_net(layer_sizes, rng, dtype=np.float64, scale=None):
    """Random network with explicit layer sizes [C, hidden..., 2]."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        s = scale if scale is not None else np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, s, size=(fan_in, fan_out)))
        biases.append(rng.normal(0.0, 0.1, size=fan_out))
    return QNetwork(weights, biases, dtype=dtype)


def zero_net(layer_sizes, dtype=np.float64):
    weights = [
        np.zeros((i, o)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])
    ]
    biases = [np.zeros(o) for o in layer_sizes[1:]]
    return QNetwork(weights, biases, dtype=dtype)
