import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def roll_np(a, s1, s2=0):
    """Reference roll with ``out[n] = a[n + s]`` on the last two axes."""
    return np.roll(a, (-s1, -s2), axis=(-2, -1))
