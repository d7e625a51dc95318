import numpy as np
import pytest

from polysample.polyphase import decompose, permutation_of_shift
from polysample.selection import (ConstantSelector, SelectorWeights, argmax_lowest, ftheta,
                                  gumbel_softmax, norm_logits, ptheta)
from polysample.tensor import Tensor

from conftest import roll_np


def test_argmax_ties_go_low():
    np.testing.assert_array_equal(argmax_lowest(np.array([[1.0, 3.0, 3.0, 0.0], [2, 2, 2, 2]])), [1, 0])


def test_zero_weights_give_zero_logits_and_uniform_probs(rng):
    w = SelectorWeights.zeros(3)
    c = Tensor(rng.normal(size=(5, 3, 4, 4)))
    np.testing.assert_array_equal(ftheta(c, w).data, np.zeros(5))
    dist = ptheta(decompose(Tensor(rng.normal(size=(2, 3, 8, 8)))), w)
    np.testing.assert_array_equal(dist.probs.data, np.full((2, 4), 0.25))


def test_ftheta_is_shift_invariant_bitwise(rng):
    w = SelectorWeights.init(2, rng=rng)
    c = rng.normal(size=(1, 2, 4, 6))
    base = ftheta(Tensor(c), w).data
    for s in [(1, 0), (0, 5), (3, 3)]:
        assert np.array_equal(ftheta(Tensor(roll_np(c, *s)), w).data, base)


def test_ftheta_weights_shared_across_components(rng):
    w = SelectorWeights.init(2, rng=rng)
    comps = rng.normal(size=(4, 2, 3, 3))
    order = rng.permutation(4)
    together = ftheta(Tensor(comps), w).data
    permuted = ftheta(Tensor(comps[order]), w).data
    np.testing.assert_array_equal(permuted, together[order])


def test_identical_components_uniform_probs(rng):
    w = SelectorWeights.init(2, rng=rng)
    x = np.repeat(np.repeat(rng.normal(size=(1, 2, 3, 3)), 2, axis=2), 2, axis=3)
    np.testing.assert_allclose(ptheta(decompose(Tensor(x)), w).probs.data, [[0.25] * 4], atol=1e-15)


def test_ptheta_permutes_under_shift_bitwise(rng):
    w = SelectorWeights.init(3, rng=rng)
    x = rng.normal(size=(1, 3, 8, 8))
    probs = ptheta(decompose(Tensor(x)), w).probs.data
    for s1 in range(8):
        for s2 in range(8):
            moved = ptheta(decompose(Tensor(roll_np(x, s1, s2))), w).probs.data
            assert np.array_equal(moved, permutation_of_shift(s1, s2).apply(probs))


def test_norm_logits_row_embedding():
    x = np.zeros((1, 1, 2, 4))
    x[0, 0, 0] = [1, -5, 2, 0]
    dist = norm_logits(decompose(Tensor(x)))
    np.testing.assert_allclose(dist.logits.data[0], [np.sqrt(5), 5, 0, 0])
    assert dist.k_star[0] == 1


def test_norm_logits_zero_tensor():
    dist = norm_logits(decompose(Tensor(np.zeros((1, 1, 4, 4)))))
    np.testing.assert_array_equal(dist.probs.data, [[0.25] * 4])
    assert dist.k_star[0] == 0


def test_gumbel_low_temperature_is_one_hot():
    z = gumbel_softmax(Tensor(np.array([[2.0, 1.0, 0.0, -1.0]])), 0.01, noise=0.0).data
    np.testing.assert_allclose(z, [[1, 0, 0, 0]], atol=1e-10)


def test_gumbel_unit_temperature_without_noise_is_softmax():
    logits = np.array([[0.3, -1.2, 2.0, 0.0]])
    z = gumbel_softmax(Tensor(logits), 1.0, noise=0.0).data
    e = np.exp(logits - logits.max())
    np.testing.assert_allclose(z, e / e.sum(), atol=1e-15)


def test_gumbel_max_frequency():
    rng = np.random.default_rng(7)
    n = 100_000
    logits = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    z = gumbel_softmax(Tensor(logits), 1.0, rng).data
    freq = np.mean(np.argmax(z, axis=1) == 0)
    assert abs(freq - np.e / (np.e + 3)) <= 0.01


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_gumbel_rejects_non_positive_tau(tau):
    with pytest.raises(ValueError):
        gumbel_softmax(Tensor(np.zeros((1, 4))), tau, noise=0.0)


def test_gumbel_needs_randomness_source():
    with pytest.raises(ValueError):
        gumbel_softmax(Tensor(np.zeros((1, 4))), 1.0)


def test_constant_selector(rng):
    dist = ConstantSelector()(decompose(Tensor(rng.normal(size=(3, 1, 4, 4)))))
    np.testing.assert_array_equal(dist.k_star, [0, 0, 0])


def test_selector_channel_mismatch(rng):
    with pytest.raises(ValueError, match="channels"):
        ftheta(Tensor(rng.normal(size=(1, 2, 4, 4))), SelectorWeights.zeros(3))
