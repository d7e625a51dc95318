"""Down/upsampling layers: plain stride-2, APS, LPD, LPU and fixed low-pass filters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import functional as F
from .polyphase import NUM_PHASES, PolyphaseSet, check_even, decompose
from .selection import SelectionDistribution, component_norms, gumbel_softmax
from .tensor import Tensor

Selector = Callable[[PolyphaseSet], SelectionDistribution]

_FILTER_TAPS = {
    "rect2": [1.0, 1.0],
    "tri3": [1.0, 2.0, 1.0],
    "bin5": [1.0, 4.0, 6.0, 4.0, 1.0],
}


@dataclass(frozen=True)
class LowPassFilter:
    name: str
    taps: Tuple[float, ...]
    gain: float = 4.0
    pad_mode: str = "circular"


def make_filter(name: str, pad_mode: str = "circular") -> LowPassFilter:
    try:
        taps = np.asarray(_FILTER_TAPS[name], dtype=np.float64)
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {sorted(_FILTER_TAPS)}") from None
    return LowPassFilter(name, tuple(taps / taps.sum()), 4.0, pad_mode)


def lowpass(x: Tensor, f: LowPassFilter) -> Tensor:
    return F.separable_filter(x, np.asarray(f.taps), f.pad_mode)


@dataclass(frozen=True)
class SamplerMode:
    kind: str = "eval_argmax"
    tau: float = 1.0

    KINDS = ("train_gumbel", "train_softmax", "eval_argmax")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"mode must be one of {self.KINDS}, got {self.kind!r}")
        if self.training and not self.tau > 0:
            raise ValueError(f"temperature must be positive in {self.kind}, got {self.tau}")

    @property
    def training(self) -> bool:
        return self.kind != "eval_argmax"

    @classmethod
    def gumbel(cls, tau: float) -> "SamplerMode":
        return cls("train_gumbel", tau)

    @classmethod
    def softmax(cls, tau: float) -> "SamplerMode":
        return cls("train_softmax", tau)

    @classmethod
    def eval(cls) -> "SamplerMode":
        return cls("eval_argmax")


EVAL = SamplerMode.eval()


def downsample(x: Tensor) -> Tensor:
    """Keep even rows and even columns."""
    x = F.as_tensor(x)
    check_even(x.shape)
    return F.phase(x, 0, 0)


def aps(x: Tensor, ord: float = 2) -> Tuple[Tensor, np.ndarray]:
    """Adaptive polyphase sampling: keep the component with the largest norm.

    Norms are taken per sample over channels and space; ties go to the lowest
    component index. Returns the output and the chosen index per sample.
    """
    p = decompose(x)
    k_star = np.argmax(component_norms(p, ord), axis=1)
    return F.select_phase(p.components, k_star), k_star


def lpd(x: Tensor, selector: Selector, mode: SamplerMode = EVAL,
        rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, SelectionDistribution]:
    """Learnable polyphase downsampling.

    In eval mode the component with the largest logit is returned. In train
    modes the output is the convex combination of all four components weighted
    by a Gumbel-softmax sample (or a plain tempered softmax).
    """
    p = decompose(x)
    dist = selector(p)
    if not mode.training:
        return F.select_phase(p.components, dist.k_star), dist
    if mode.kind == "train_gumbel":
        z = gumbel_softmax(dist.logits, mode.tau, rng)
    else:
        z = gumbel_softmax(dist.logits, mode.tau, noise=0.0)
    return F.mix_phases(p.components, z), dist.with_weights(z, mode.tau)


def lpu(y: Tensor, dist: SelectionDistribution, target_shape: Tuple[int, int],
        mode: SamplerMode = EVAL, filt: Optional[LowPassFilter] = None) -> Tensor:
    """Learnable polyphase upsampling paired with an earlier :func:`lpd` call.

    Eval mode places ``y`` at phase ``k_star`` and zeros elsewhere; train modes
    spread it over all four phases weighted by ``dist.z``. An optional low-pass
    filter (with its upsampling gain) is applied afterwards.
    """
    y = F.as_tensor(y)
    n1, n2 = target_shape
    check_even((n1, n2), "target")
    if y.ndim != 4 or y.shape[2:] != (n1 // 2, n2 // 2):
        raise ValueError(f"lpu: input {y.shape} does not match half of target {target_shape}")
    if mode.training:
        if dist.z is None:
            raise ValueError("lpu in train mode needs the relaxed weights from lpd")
        weights = dist.z
    else:
        onehot = np.zeros((y.shape[0], NUM_PHASES))
        onehot[np.arange(y.shape[0]), dist.k_star] = 1.0
        weights = Tensor(onehot)
    u = F.place_phases(y, weights)
    if filt is not None:
        u = F.scale(lowpass(u, filt), filt.gain)
    return u
