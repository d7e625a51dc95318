"""Toy networks built around LPD/LPU.

``SimpleClassifier``: conv -> ReLU -> pool -> global average -> linear.
``SimpleUNet``: conv -> pool -> conv -> unpool -> low-pass.

Parameters live in a flat ``{name: Tensor}`` dict so they map one-to-one
onto checkpoint entries. Selector parameters are prefixed ``lpd.``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import functional as F
from .polyphase import check_even
from .sampling import EVAL, SamplerMode, aps, downsample, lpd, lpu, make_filter
from .selection import (LearnedSelector, SelectionDistribution, SelectorWeights,
                        distribution_from_logits)
from .tensor import Tensor
from .tensorfile import load_tensors, save_tensors

POOLS = ("lpd", "aps", "plain")
SELECTOR_PREFIX = "lpd."

Params = Dict[str, Tensor]


def is_selector_param(name: str) -> bool:
    return name.startswith(SELECTOR_PREFIX)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _selector_params(params: Params) -> SelectorWeights:
    return SelectorWeights.from_dict(
        {k[len(SELECTOR_PREFIX):]: v for k, v in params.items() if is_selector_param(k)})


def _check_pool(pool):
    if pool not in POOLS:
        raise ValueError(f"pool must be one of {POOLS}, got {pool!r}")


def _pool(x: Tensor, pool: str, params: Params, mode: SamplerMode, rng):
    if pool == "lpd":
        return lpd(x, LearnedSelector(_selector_params(params)), mode, rng)
    if pool == "aps":
        y, k = aps(x)
        return y, _hard_distribution(k)
    return downsample(x), _hard_distribution(np.zeros(x.shape[0], dtype=np.int64))


def _hard_distribution(k: np.ndarray) -> SelectionDistribution:
    logits = np.zeros((k.size, 4))
    logits[np.arange(k.size), k] = 1.0
    return distribution_from_logits(Tensor(logits))


def _check_input(x: Tensor, channels: int):
    if x.ndim != 4:
        raise ValueError(f"expected [B, C, N, N] input, got {x.shape}")
    if x.shape[1] != channels:
        raise ValueError(f"model expects {channels} input channels, got {x.shape[1]}")
    check_even(x.shape)


@dataclass
class ClassifierSpec:
    in_channels: int = 3
    feature_channels: int = 32
    num_classes: int = 3
    pad_mode: str = "circular"
    pool: str = "lpd"
    hidden_channels: Optional[int] = None
    activation: bool = True

    def __post_init__(self):
        _check_pool(self.pool)


class SimpleClassifier:
    def __init__(self, spec: ClassifierSpec, params: Optional[Params] = None,
                 rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.params = params if params is not None else self.init_params(spec, rng)

    @staticmethod
    def init_params(spec: ClassifierSpec, rng=None) -> Params:
        rng = np.random.default_rng() if rng is None else rng
        c, f = spec.in_channels, spec.feature_channels
        params = {
            "conv1.weight": _uniform(rng, (f, c, 3, 3), c * 9),
            "conv1.bias": _uniform(rng, (f,), c * 9),
        }
        if spec.pool == "lpd":
            sel = SelectorWeights.init(f, spec.hidden_channels, rng)
            params.update({SELECTOR_PREFIX + k: v for k, v in sel.as_dict().items()})
        params["fc.weight"] = _uniform(rng, (spec.num_classes, f), f)
        params["fc.bias"] = _uniform(rng, (spec.num_classes,), f)
        return params

    @classmethod
    def from_params(cls, params: Params, **overrides) -> "SimpleClassifier":
        """Rebuild a classifier whose shape is implied by its parameter tensors."""
        f, c = params["conv1.weight"].shape[:2]
        pool = overrides.pop("pool", None)
        hidden = None
        if any(is_selector_param(k) for k in params):
            pool, hidden = "lpd", params[SELECTOR_PREFIX + "conv1_w"].shape[0]
        elif pool in (None, "lpd"):
            pool = "plain"
        spec = ClassifierSpec(in_channels=c, feature_channels=f,
                              num_classes=params["fc.weight"].shape[0], pool=pool,
                              hidden_channels=hidden, **overrides)
        return cls(spec, params)

    def features(self, x, mode: SamplerMode = EVAL, rng=None):
        x = F.as_tensor(x)
        _check_input(x, self.spec.in_channels)
        p = self.params
        h = F.conv2d(x, p["conv1.weight"], p["conv1.bias"], padding=1, pad_mode=self.spec.pad_mode)
        if self.spec.activation:
            h = F.relu(h)
        return _pool(h, self.spec.pool, p, mode, rng)

    def forward(self, x, mode: SamplerMode = EVAL, rng=None) -> Tensor:
        h, _ = self.features(x, mode, rng)
        return F.linear(F.global_avg_pool(h), self.params["fc.weight"], self.params["fc.bias"])

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.forward(x).data, axis=1)


def classifier_forward(spec: ClassifierSpec, weights: Params, x, mode: SamplerMode = EVAL,
                       rng=None) -> Tensor:
    return SimpleClassifier(spec, weights).forward(x, mode, rng)


@dataclass
class UNetSpec:
    in_channels: int = 3
    feature_channels: int = 32
    filter_name: Optional[str] = "tri3"
    pad_mode: str = "circular"
    pool: str = "lpd"
    hidden_channels: Optional[int] = None

    def __post_init__(self):
        _check_pool(self.pool)


class SimpleUNet:
    def __init__(self, spec: UNetSpec, params: Optional[Params] = None,
                 rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.params = params if params is not None else self.init_params(spec, rng)

    @staticmethod
    def init_params(spec: UNetSpec, rng=None) -> Params:
        rng = np.random.default_rng() if rng is None else rng
        c, f = spec.in_channels, spec.feature_channels
        params = {
            "conv1.weight": _uniform(rng, (f, c, 3, 3), c * 9),
            "conv1.bias": _uniform(rng, (f,), c * 9),
        }
        if spec.pool == "lpd":
            sel = SelectorWeights.init(f, spec.hidden_channels, rng)
            params.update({SELECTOR_PREFIX + k: v for k, v in sel.as_dict().items()})
        params["conv2.weight"] = _uniform(rng, (f, f, 3, 3), f * 9)
        params["conv2.bias"] = _uniform(rng, (f,), f * 9)
        return params

    def forward(self, x, mode: SamplerMode = EVAL, rng=None) -> Tensor:
        x = F.as_tensor(x)
        _check_input(x, self.spec.in_channels)
        p, s = self.params, self.spec
        h = F.conv2d(x, p["conv1.weight"], p["conv1.bias"], padding=1, pad_mode=s.pad_mode)
        h, dist = _pool(h, s.pool, p, mode, rng)
        h = F.conv2d(h, p["conv2.weight"], p["conv2.bias"], padding=1, pad_mode=s.pad_mode)
        if s.pool == "plain":
            return F.upsample_nearest(h)
        filt = make_filter(s.filter_name) if s.filter_name else None
        return lpu(h, dist, x.shape[2:], mode, filt)

    __call__ = forward

    def segment(self, x) -> np.ndarray:
        """Per-pixel argmax over output channels."""
        return np.argmax(self.forward(x).data, axis=1)


def unet_forward(spec: UNetSpec, weights: Params, x, mode: SamplerMode = EVAL, rng=None) -> Tensor:
    return SimpleUNet(spec, weights).forward(x, mode, rng)


def maxpool_equivariant(x, selector, mode: SamplerMode = EVAL, rng=None):
    """Circular 2x2 max filter followed by LPD; returns ``(y, dist)``."""
    return lpd(F.max_filter_2x2(F.as_tensor(x), "circular"), selector, mode, rng)



# -- checkpoints ------------------------------------------------------------

_PAD_MODES = ("circular", "zero")


def save_classifier(path: str, model: SimpleClassifier) -> None:
    """Parameters plus the spec fields that weight shapes do not imply."""
    s = model.spec
    meta = {"meta.pool": [POOLS.index(s.pool)], "meta.pad_mode": [_PAD_MODES.index(s.pad_mode)],
            "meta.activation": [float(s.activation)]}
    save_tensors(path, {**model.params, **meta})


def load_classifier(path: str) -> SimpleClassifier:
    tensors = load_tensors(path)
    meta = {k: tensors.pop(k) for k in [k for k in tensors if k.startswith("meta.")]}
    missing = {"conv1.weight", "conv1.bias", "fc.weight", "fc.bias"} - set(tensors)
    if missing:
        raise ValueError(f"{path}: not a classifier checkpoint, missing {sorted(missing)}")
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
    overrides = {}
    if "meta.pad_mode" in meta:
        overrides["pad_mode"] = _PAD_MODES[int(meta["meta.pad_mode"][0])]
    if "meta.activation" in meta:
        overrides["activation"] = bool(meta["meta.activation"][0])
    if "meta.pool" in meta:
        overrides["pool"] = POOLS[int(meta["meta.pool"][0])]
    return SimpleClassifier.from_params(params, **overrides)
