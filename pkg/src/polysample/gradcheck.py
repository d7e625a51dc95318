"""Central-difference gradient checks for every differentiable op.

Non-scalar ops are reduced with a fixed random projection so that every
output element contributes to the checked gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import functional as F
from .nets import ClassifierSpec, SimpleClassifier, SimpleUNet, UNetSpec
from .polyphase import decompose
from .sampling import SamplerMode, lpd, lpu, make_filter
from .selection import LearnedSelector, SelectorWeights, gumbel_softmax, ptheta
from .tensor import Tensor, grad_check

GRAD_TOLERANCE = 1e-5

# (function, inputs) for one trial
Case = Tuple[Callable[..., Tensor], List[Tensor]]


def _project(out: Tensor, rng) -> Tensor:
    return F.sum_all(F.mul(out, Tensor(rng.normal(size=out.shape))))


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _away_from_zero(rng, *shape) -> Tensor:
    # keep relu inputs away from the kink at 0
    v = rng.normal(size=shape)
    return Tensor(np.where(np.abs(v) < 1e-3, 0.1, v))


def _net_params(params) -> Tuple[List[str], List[Tensor]]:
    names = sorted(params)
    return names, [params[k] for k in names]


def make_cases(rng: np.random.Generator) -> Dict[str, Case]:
    """One random instance of every checked function."""
    proj = {k: rng.integers(1 << 30) for k in range(32)}

    def projected(f, slot):
        def g(*xs):
            return _project(f(*xs), np.random.default_rng(proj[slot]))
        return g

    cases: Dict[str, Case] = {}
    cases["add"] = (projected(F.add, 0), [_t(rng, 2, 3), _t(rng, 2, 3)])
    cases["mul"] = (projected(F.mul, 1), [_t(rng, 2, 3), _t(rng, 2, 3)])
    cases["scale"] = (projected(lambda x: F.scale(x, -1.7), 2), [_t(rng, 3, 2)])
    cases["relu"] = (projected(F.relu, 3), [_away_from_zero(rng, 2, 5)])
    cases["reshape"] = (projected(lambda x: F.reshape(x, (6, 2)), 4), [_t(rng, 3, 4)])
    cases["sum_all"] = (F.sum_all, [_t(rng, 2, 3, 2)])
    cases["mean_all"] = (F.mean_all, [_t(rng, 4, 3)])
    cases["global_avg_pool"] = (projected(F.global_avg_pool, 5), [_t(rng, 2, 3, 4, 4)])
    cases["mean_per_sample"] = (projected(F.mean_per_sample, 6), [_t(rng, 3, 2, 2, 2)])
    cases["linear"] = (projected(F.linear, 7), [_t(rng, 3, 4), _t(rng, 2, 4), _t(rng, 2)])
    cases["softmax"] = (projected(F.softmax, 8), [_t(rng, 3, 4)])
    labels = rng.integers(0, 4, size=3)
    cases["cross_entropy"] = (lambda z: F.cross_entropy(z, labels), [_t(rng, 3, 4)])
    conv_configs = [(1, 1, "circular"), (1, 1, "zero"), (2, 1, "circular"), (2, 0, "zero")]
    for slot, (stride, pad, mode) in enumerate(conv_configs, start=9):
        f = (lambda s, p, m: lambda x, w, b: F.conv2d(x, w, b, stride=s, padding=p, pad_mode=m))(
            stride, pad, mode)
        cases[f"conv2d[s{stride},p{pad},{mode}]"] = (
            projected(f, slot), [_t(rng, 1, 2, 6, 6), _t(rng, 2, 2, 3, 3), _t(rng, 2)])
    s1, s2 = (int(v) for v in rng.integers(-5, 6, size=2))
    cases["roll"] = (projected(lambda x: F.roll(x, s1, s2), 13), [_t(rng, 1, 2, 4, 6)])
    for slot, mode in enumerate(("circular", "zero"), start=14):
        cases[f"max_filter_2x2[{mode}]"] = (
            projected(lambda x, m=mode: F.max_filter_2x2(x, m), slot), [_t(rng, 2, 2, 4, 4)])
    for slot, name in enumerate(("rect2", "tri3", "bin5"), start=16):
        taps = make_filter(name).taps
        cases[f"separable_filter[{name}]"] = (
            projected(lambda x, t=taps: F.separable_filter(x, t), slot), [_t(rng, 1, 2, 6, 6)])
    cases["upsample_nearest"] = (projected(F.upsample_nearest, 19), [_t(rng, 2, 2, 3, 3)])
    cases["phase"] = (projected(lambda x: F.phase(x, 1, 0), 20), [_t(rng, 2, 1, 4, 4)])
    cases["interleave"] = (projected(lambda *p: F.interleave(p), 21),
                           [_t(rng, 2, 1, 2, 2) for _ in range(4)])
    index = rng.integers(0, 4, size=2)
    cases["select_phase"] = (projected(lambda *p: F.select_phase(p, index), 22),
                             [_t(rng, 2, 1, 2, 2) for _ in range(4)])
    cases["mix_phases"] = (projected(lambda *a: F.mix_phases(a[:4], a[4]), 23),
                           [_t(rng, 2, 1, 2, 2) for _ in range(4)] + [_t(rng, 2, 4)])
    cases["place_phases"] = (projected(F.place_phases, 24), [_t(rng, 2, 2, 2, 2), _t(rng, 2, 4)])
    noise = rng.gumbel(size=(2, 4))
    cases["gumbel_softmax"] = (projected(lambda z: gumbel_softmax(z, 0.7, noise=noise), 25),
                               [_t(rng, 2, 4)])

    sel = SelectorWeights.init(2, rng=rng)
    sel_names = SelectorWeights.NAMES

    def selector_from(args):
        return SelectorWeights(*args)

    cases["ptheta"] = (projected(lambda x, *w: ptheta(decompose(x), selector_from(w)).probs, 26),
                       [_t(rng, 2, 2, 4, 4)] + [getattr(sel, n) for n in sel_names])
    seed = int(rng.integers(1 << 30))
    filt = make_filter("tri3")

    def lpd_lpu(x, *w):
        y, dist = lpd(x, LearnedSelector(selector_from(w)), SamplerMode.gumbel(0.5),
                      np.random.default_rng(seed))
        return lpu(y, dist, x.shape[2:], SamplerMode.gumbel(0.5), filt)

    cases["lpd+lpu[train_gumbel]"] = (projected(lpd_lpu, 27),
                                      [_t(rng, 2, 2, 4, 4)] + [getattr(sel, n) for n in sel_names])

    clf_spec = ClassifierSpec(in_channels=2, feature_channels=2, num_classes=3, hidden_channels=2)
    names, values = _net_params(SimpleClassifier.init_params(clf_spec, rng))
    images = _t(rng, 2, 2, 4, 4)
    targets = rng.integers(0, 3, size=2)

    def classifier_loss(x, *ws):
        model = SimpleClassifier(clf_spec, dict(zip(names, ws)))
        logits = model.forward(x, SamplerMode.gumbel(0.8), np.random.default_rng(seed))
        return F.cross_entropy(logits, targets)

    cases["classifier_loss[train_gumbel]"] = (classifier_loss, [images] + values)

    unet_spec = UNetSpec(in_channels=2, feature_channels=2, hidden_channels=2)
    unames, uvalues = _net_params(SimpleUNet.init_params(unet_spec, rng))

    def unet_loss(x, *ws):
        out = SimpleUNet(unet_spec, dict(zip(unames, ws))).forward(
            x, SamplerMode.softmax(0.8))
        return _project(out, np.random.default_rng(proj[28]))

    cases["unet_loss[train_softmax]"] = (unet_loss, [_t(rng, 1, 2, 4, 4)] + uvalues)
    return cases


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    trials: int
    passed: bool


def run_gradchecks(trials: int = 10, seed: int = 0, h: float = 1e-6,
                   tolerance: float = GRAD_TOLERANCE) -> List[GradCheckResult]:
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    rng = np.random.default_rng(seed)
    worst: Dict[str, float] = {}
    for _ in range(trials):
        for name, (f, xs) in make_cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), grad_check(f, xs, h))
    return [GradCheckResult(n, float(e), trials, bool(e <= tolerance)) for n, e in worst.items()]
