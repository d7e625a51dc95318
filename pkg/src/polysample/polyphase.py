"""Factor-2 polyphase decomposition of 2D feature maps.

Component ``k = 2*i + j`` holds the samples at row phase ``i`` and column
phase ``j``: ``component[k][..., n1, n2] = x[..., 2*n1 + i, 2*n2 + j]``.

A circular shift of the input permutes the components and rolls each by a
residual amount (see :func:`permutation_of_shift`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor

NUM_PHASES = 4


class OddExtentError(ValueError):
    """Raised when a spatial extent cannot be split into two phases."""


def check_even(shape, what: str = "input") -> None:
    n1, n2 = shape[-2:]
    if n1 % 2 or n2 % 2 or n1 < 2 or n2 < 2:
        raise OddExtentError(f"{what} spatial extents must be even and >= 2, got {(n1, n2)}")


@dataclass(frozen=True)
class PolyphaseSet:
    components: Tuple[Tensor, Tensor, Tensor, Tensor]
    origin_shape: Tuple[int, int]

    def __getitem__(self, k: int) -> Tensor:
        return self.components[k]

    def __len__(self) -> int:
        return NUM_PHASES

    @property
    def batch(self) -> int:
        return self.components[0].shape[0]

    def stacked(self) -> Tensor:
        """All components as one ``[4B, C, M1, M2]`` batch, sample-major."""
        return F.interleave(self.components)


def decompose(x: Tensor) -> PolyphaseSet:
    x = F.as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"decompose expects [B, C, N1, N2], got {x.shape}")
    check_even(x.shape)
    comps = tuple(F.phase(x, *divmod(k, 2)) for k in range(NUM_PHASES))
    return PolyphaseSet(comps, tuple(x.shape[2:]))


def recompose(p: PolyphaseSet) -> Tensor:
    shape = p[0].shape
    for c in p.components[1:]:
        if c.shape != shape:
            raise ValueError(f"component shape mismatch: {c.shape} vs {shape}")
    if tuple(p.origin_shape) != (2 * shape[2], 2 * shape[3]):
        raise ValueError(f"components {shape} do not tile origin {p.origin_shape}")
    out = np.empty(shape[:2] + tuple(p.origin_shape))
    for k in range(NUM_PHASES):
        i, j = divmod(k, 2)
        out[..., i::2, j::2] = p[k].data
    return Tensor(out)


def decompose1d(x) -> List[np.ndarray]:
    """Even and odd samples along the last axis."""
    x = np.asarray(x)
    if x.shape[-1] % 2:
        raise OddExtentError(f"extent must be even, got {x.shape[-1]}")
    return [x[..., 0::2], x[..., 1::2]]


def _axis_permutation(s: int):
    # original phase k reappears at phase (k - s) % 2 of the shifted signal,
    # rolled by ((k - s) % 2 + s) // 2 samples
    perm = [(k - s) % 2 for k in range(2)]
    residual = [(perm[k] + s) // 2 for k in range(2)]
    return perm, residual


@dataclass(frozen=True)
class PhasePermutation:
    """How a circular shift acts on the four components.

    ``decompose(roll(x, s1, s2))[perm[k]] == roll(decompose(x)[k], *residual[k])``.
    """

    perm: Tuple[int, int, int, int]
    residual: Tuple[Tuple[int, int], ...]
    shift: Tuple[int, int] = (0, 0)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Move per-component values (last axis) to their post-shift indices."""
        values = np.asarray(values)
        out = np.empty_like(values)
        out[..., list(self.perm)] = values
        return out

    def compose(self, other: "PhasePermutation") -> "PhasePermutation":
        """Action of ``other``'s shift followed by this one's."""
        perm = tuple(self.perm[other.perm[k]] for k in range(NUM_PHASES))
        residual = tuple(
            (other.residual[k][0] + self.residual[other.perm[k]][0],
             other.residual[k][1] + self.residual[other.perm[k]][1])
            for k in range(NUM_PHASES))
        return PhasePermutation(perm, residual,
                                (self.shift[0] + other.shift[0], self.shift[1] + other.shift[1]))


def permutation_of_shift(s1: int, s2: int = 0) -> PhasePermutation:
    p1, r1 = _axis_permutation(s1)
    p2, r2 = _axis_permutation(s2)
    perm, residual = [], []
    for k in range(NUM_PHASES):
        i, j = divmod(k, 2)
        perm.append(2 * p1[i] + p2[j])
        residual.append((r1[i], r2[j]))
    return PhasePermutation(tuple(perm), tuple(residual), (s1, s2))


def permutation_of_shift1d(s: int):
    """1D analogue: returns ``(perm, residual)`` lists for the two phases."""
    return _axis_permutation(s)
