import numpy as np
import pytest

from polysample import functional as F
from polysample.tensor import Tensor, backward, grad_check, set_finite_checks


def test_mean_all_grad_is_uniform():
    x = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    backward(F.mean_all(x))
    np.testing.assert_array_equal(x.grad, np.full((2, 2), 0.25))


def test_half_sum_of_squares_grad_is_x(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    backward(F.scale(F.sum_all(F.mul(x, x)), 0.5))
    np.testing.assert_allclose(x.grad, x.data, rtol=0, atol=1e-15)


def test_shared_input_accumulates():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = F.add(F.mul(x, x), x)
    backward(F.sum_all(y))
    np.testing.assert_array_equal(x.grad, 2 * x.data + 1)


def test_unreached_leaf_gets_zero_grad():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    backward(F.sum_all(a))
    np.testing.assert_array_equal(b.grad if b.grad is not None else np.zeros(3), np.zeros(3))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        backward(F.scale(x, 2.0))


def test_backward_without_grad_raises():
    with pytest.raises(RuntimeError):
        backward(F.sum_all(Tensor(np.ones(2))))


def test_second_backward_needs_zero_grad():
    x = Tensor(np.ones(2), requires_grad=True)
    backward(F.sum_all(x))
    with pytest.raises(RuntimeError, match="zero_grad"):
        backward(F.sum_all(x))
    x.zero_grad()
    backward(F.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones(2))


def test_no_tape_without_requires_grad():
    y = F.relu(Tensor(np.array([-1.0, 2.0])))
    assert y.node is None
    np.testing.assert_array_equal(y.data, [0.0, 2.0])


def test_rank_limit():
    with pytest.raises(ValueError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_finite_checks(rng):
    set_finite_checks(True)
    try:
        with pytest.raises(FloatingPointError):
            F.add(Tensor(np.array([1.0])), Tensor(np.array([np.nan])))
    finally:
        set_finite_checks(False)


def test_deep_chain_does_not_recurse():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x
    for _ in range(5000):
        y = F.scale(y, 1.0)
    backward(F.sum_all(y))
    np.testing.assert_array_equal(x.grad, np.ones(2))


def test_grad_check_quadratic_is_tight(rng):
    x = Tensor(rng.normal(size=(5,)))
    assert grad_check(lambda t: F.sum_all(F.mul(t, t)), x) <= 1e-9


def test_grad_check_cross_entropy_linear(rng):
    x, w, b = (Tensor(rng.normal(size=s)) for s in [(4, 6), (3, 6), (3,)])
    labels = rng.integers(0, 3, size=4)
    err = grad_check(lambda x, w, b: F.cross_entropy(F.linear(x, w, b), labels), [x, w, b])
    assert err <= 1e-5


def test_grad_check_circular_conv(rng):
    x, w = Tensor(rng.normal(size=(1, 2, 5, 5))), Tensor(rng.normal(size=(2, 2, 3, 3)))
    r = rng.normal(size=(1, 2, 5, 5))
    err = grad_check(lambda x, w: F.sum_all(F.mul(F.conv2d(x, w, padding=1), Tensor(r))), [x, w])
    assert err <= 1e-5


def test_grad_check_detects_wrong_gradient(rng):
    from polysample.tensor import make_result

    def bad_square(x):
        return make_result(x.data ** 2, (x,), "bad", lambda g: (g * x.data,))

    x = Tensor(rng.normal(size=4) + 3.0)
    assert grad_check(lambda t: F.sum_all(bad_square(t)), x) > 0.1
