import numpy as np
import pytest

from polysample import functional as F
from polysample.nets import (ClassifierSpec, SimpleClassifier, SimpleUNet, UNetSpec,
                             load_classifier, maxpool_equivariant, save_classifier)
from polysample.polyphase import permutation_of_shift
from polysample.sampling import aps
from polysample.selection import LearnedSelector, NormSelector, SelectorWeights
from polysample.tensor import Tensor
from polysample.verify import classifier_invariance, unet_equivariance_residual

from conftest import roll_np


def test_classifier_logits_identical_over_all_shifts_4x4(rng):
    model = SimpleClassifier(ClassifierSpec(feature_channels=8), rng=rng)
    residual, agree = classifier_invariance(model, rng.normal(size=(3, 3, 4, 4)))
    assert residual <= 1e-9 and agree == 1.0


@pytest.mark.parametrize("pool", ["lpd", "aps"])
def test_adaptive_pools_are_invariant(rng, pool):
    model = SimpleClassifier(ClassifierSpec(feature_channels=6, pool=pool), rng=rng)
    residual, _ = classifier_invariance(model, rng.normal(size=(2, 3, 8, 8)))
    assert residual == 0.0


def test_plain_pool_is_not_invariant(rng):
    model = SimpleClassifier(ClassifierSpec(feature_channels=6, pool="plain"), rng=rng)
    residual, _ = classifier_invariance(model, rng.normal(size=(2, 3, 8, 8)))
    assert residual > 1e-6


def test_zero_weights_give_fc_bias(rng):
    model = SimpleClassifier(ClassifierSpec(feature_channels=4), rng=rng)
    for name, p in model.params.items():
        if name != "fc.bias":
            p.data[...] = 0.0
    out = model.forward(rng.normal(size=(2, 3, 8, 8))).data
    np.testing.assert_array_equal(out, np.tile(model.params["fc.bias"].data, (2, 1)))


def test_unet_roll_back_one_one(rng):
    model = SimpleUNet(UNetSpec(feature_channels=8), rng=rng)
    x = rng.normal(size=(1, 3, 16, 16))
    y = model.forward(x).data
    y_roll_s = roll_np(model.forward(roll_np(x, 1, 1)).data, -1, -1)
    assert np.max(np.abs(y - y_roll_s)) <= 1e-9


def test_unet_all_shifts(rng):
    model = SimpleUNet(UNetSpec(feature_channels=4, filter_name="bin5"), rng=rng)
    assert unet_equivariance_residual(model, rng.normal(size=(2, 3, 8, 8))) == 0.0


def _identity_kernel(c):
    w = np.zeros((c, c, 3, 3))
    w[np.arange(c), np.arange(c), 1, 1] = 1.0
    return w


def test_unet_identity_weights_give_masked_lowpass(rng):
    model = SimpleUNet(UNetSpec(feature_channels=3, filter_name="tri3"), rng=rng)
    for name, p in model.params.items():
        p.data[...] = 0.0
    model.params["conv1.weight"].data[...] = _identity_kernel(3)
    model.params["conv2.weight"].data[...] = _identity_kernel(3)
    x = rng.normal(size=(1, 3, 8, 8))
    # zero selector weights -> uniform logits -> phase 0 by the tie rule
    masked = np.zeros_like(x)
    masked[..., ::2, ::2] = x[..., ::2, ::2]
    expect = masked
    for axis in (-2, -1):
        expect = 0.25 * np.roll(expect, 1, axis) + 0.5 * expect + 0.25 * np.roll(expect, -1, axis)
    np.testing.assert_allclose(model.forward(x).data, 4 * expect, atol=1e-14)


def test_unet_zero_input_zero_output(rng):
    model = SimpleUNet(UNetSpec(feature_channels=4), rng=rng)
    for name, p in model.params.items():
        if name.endswith("bias") or name.endswith("_b"):
            p.data[...] = 0.0
    assert np.all(model.forward(np.zeros((1, 3, 8, 8))).data == 0.0)


def test_segment_shape(rng):
    model = SimpleUNet(UNetSpec(feature_channels=4), rng=rng)
    assert model.segment(rng.normal(size=(2, 3, 8, 8))).shape == (2, 8, 8)


def test_maxpool_constant_input():
    y, _ = maxpool_equivariant(np.full((1, 2, 6, 6), 3.0), NormSelector())
    np.testing.assert_array_equal(y.data, np.full((1, 2, 3, 3), 3.0))


def test_maxpool_equivariant_all_shifts(rng):
    sel = LearnedSelector(SelectorWeights.init(2, rng=rng))
    x = rng.normal(size=(1, 2, 6, 6))
    y0, d0 = maxpool_equivariant(x, sel)
    for s1 in range(6):
        for s2 in range(6):
            y, _ = maxpool_equivariant(roll_np(x, s1, s2), sel)
            res = permutation_of_shift(s1, s2).residual[d0.k_star[0]]
            assert np.array_equal(y.data, roll_np(y0.data, *res))


def test_maxpool_with_norm_selector_is_aps_after_max_filter(rng):
    x = rng.normal(size=(20, 2, 8, 8))
    y, dist = maxpool_equivariant(x, NormSelector())
    y_ref, k_ref = aps(F.max_filter_2x2(Tensor(x)))
    np.testing.assert_array_equal(dist.k_star, k_ref)
    np.testing.assert_array_equal(y.data, y_ref.data)


@pytest.mark.parametrize("pool", ["lpd", "aps", "plain"])
def test_checkpoint_reload_is_bit_identical(tmp_path, rng, pool):
    hidden = 3 if pool == "lpd" else None
    model = SimpleClassifier(ClassifierSpec(feature_channels=5, hidden_channels=hidden, pool=pool,
                                            pad_mode="zero"), rng=rng)
    path = tmp_path / "m.lpst"
    save_classifier(str(path), model)
    again = load_classifier(str(path))
    assert again.spec == model.spec
    x = rng.normal(size=(4, 3, 8, 8))
    assert np.array_equal(again.forward(x).data, model.forward(x).data)


def test_input_validation(rng):
    model = SimpleClassifier(ClassifierSpec(feature_channels=4), rng=rng)
    with pytest.raises(ValueError, match="channels"):
        model.forward(rng.normal(size=(1, 2, 8, 8)))
    with pytest.raises(ValueError):
        model.forward(rng.normal(size=(1, 3, 7, 8)))
    with pytest.raises(ValueError):
        ClassifierSpec(pool="blur")
