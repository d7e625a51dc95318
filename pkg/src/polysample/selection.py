"""Conditional distributions over polyphase components.

A *selector* is any callable ``PolyphaseSet -> SelectionDistribution``. Three
are provided: the learned conv selector (:class:`LearnedSelector`), the
norm-based selector that reproduces adaptive polyphase sampling
(:class:`NormSelector`) and a fixed-logit selector (:class:`ConstantSelector`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional

import numpy as np

from . import functional as F
from .polyphase import NUM_PHASES, PolyphaseSet
from .tensor import Tensor

GUMBEL_EPS = 1e-12


def argmax_lowest(values: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties resolve to the lowest index."""
    return np.argmax(np.asarray(values), axis=-1)


@dataclass(frozen=True)
class SelectionDistribution:
    logits: Tensor                    # [B, 4]
    probs: Tensor                     # [B, 4]
    k_star: np.ndarray                # [B]
    z: Optional[Tensor] = None        # [B, 4], relaxed one-hot in train modes
    tau: Optional[float] = None

    def with_weights(self, z: Tensor, tau: float) -> "SelectionDistribution":
        return replace(self, z=z, tau=tau)


def distribution_from_logits(logits: Tensor) -> SelectionDistribution:
    logits = F.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] != NUM_PHASES:
        raise ValueError(f"expected logits of shape [B, 4], got {logits.shape}")
    return SelectionDistribution(logits, F.softmax(logits), argmax_lowest(logits.data))


@dataclass
class SelectorWeights:
    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor

    NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b")

    @classmethod
    def init(cls, channels: int, hidden: Optional[int] = None,
             rng: Optional[np.random.Generator] = None) -> "SelectorWeights":
        """Fan-in scaled uniform init, which keeps starting logits near zero."""
        rng = np.random.default_rng() if rng is None else rng
        hidden = channels if hidden is None else hidden

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        return cls(uniform((hidden, channels, 3, 3), channels * 9),
                   uniform((hidden,), channels * 9),
                   uniform((hidden, hidden, 3, 3), hidden * 9),
                   uniform((hidden,), hidden * 9))

    @classmethod
    def zeros(cls, channels: int, hidden: Optional[int] = None) -> "SelectorWeights":
        hidden = channels if hidden is None else hidden
        return cls(Tensor(np.zeros((hidden, channels, 3, 3))), Tensor(np.zeros(hidden)),
                   Tensor(np.zeros((hidden, hidden, 3, 3))), Tensor(np.zeros(hidden)))

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[1]

    def as_dict(self) -> Dict[str, Tensor]:
        return {name: getattr(self, name) for name in self.NAMES}

    @classmethod
    def from_dict(cls, d: Dict[str, Tensor]) -> "SelectorWeights":
        return cls(**{name: d[name] for name in cls.NAMES})


def ftheta(component: Tensor, w: SelectorWeights) -> Tensor:
    """Logit of each component in a ``[n, C, M1, M2]`` batch -> ``[n]``.

    Two circular 3x3 convs (ReLU between) followed by a mean over channels
    and space, so the result is exactly invariant to circular shifts.
    """
    component = F.as_tensor(component)
    if component.shape[1] != w.channels:
        raise ValueError(f"selector expects {w.channels} channels, got {component.shape[1]}")
    h = F.relu(F.conv2d(component, w.conv1_w, w.conv1_b, padding=1, pad_mode="circular"))
    h = F.conv2d(h, w.conv2_w, w.conv2_b, padding=1, pad_mode="circular")
    return F.mean_per_sample(h)


def ptheta(p: PolyphaseSet, w: SelectorWeights) -> SelectionDistribution:
    # all 4B components go through the logits net in one batch
    logits = ftheta(p.stacked(), w)
    return distribution_from_logits(F.reshape(logits, (p.batch, NUM_PHASES)))


def component_norms(p: PolyphaseSet, ord: float = 2) -> np.ndarray:
    """``[B, 4]`` l_ord norm of each component over channels and space."""
    out = np.empty((p.batch, NUM_PHASES))
    for k in range(NUM_PHASES):
        a = np.abs(p[k].data)
        axes = tuple(range(1, a.ndim))
        if ord == np.inf:
            out[:, k] = a.max(axis=axes)
        else:
            out[:, k] = F.invariant_sum(a ** ord, axes) ** (1.0 / ord)
    return out


def norm_logits(p: PolyphaseSet, ord: float = 2) -> SelectionDistribution:
    """Logits equal to component norms; argmax is the max-norm component."""
    return distribution_from_logits(Tensor(component_norms(p, ord)))


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.uniform(size=shape), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, tau: float, rng: Optional[np.random.Generator] = None,
                   noise: Optional[np.ndarray] = None) -> Tensor:
    """``softmax((logits + g) / tau)`` with standard Gumbel ``g``.

    Pass ``noise`` to fix ``g`` (e.g. zeros to disable sampling); otherwise it
    is drawn from ``rng``.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = F.as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs an rng or explicit noise")
        noise = gumbel_noise(logits.shape, rng)
    noise = np.broadcast_to(np.asarray(noise, dtype=np.float64), logits.shape)
    return F.softmax(F.scale(F.add(logits, Tensor(noise)), 1.0 / tau))


class LearnedSelector:
    def __init__(self, weights: SelectorWeights):
        self.weights = weights

    def __call__(self, p: PolyphaseSet) -> SelectionDistribution:
        return ptheta(p, self.weights)


class NormSelector:
    def __init__(self, ord: float = 2):
        self.ord = ord

    def __call__(self, p: PolyphaseSet) -> SelectionDistribution:
        return norm_logits(p, self.ord)


class ConstantSelector:
    """Same logits for every input; ``[10, 0, 0, 0]`` reproduces plain downsampling."""

    def __init__(self, logits=(10.0, 0.0, 0.0, 0.0)):
        self.logits = np.asarray(logits, dtype=np.float64)

    def __call__(self, p: PolyphaseSet) -> SelectionDistribution:
        return distribution_from_logits(Tensor(np.tile(self.logits, (p.batch, 1))))
