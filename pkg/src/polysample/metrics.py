"""Shift-consistency metrics.

``model`` arguments are callables mapping an image batch ``[B, C, N, N]`` to
either class scores ``[B, K]`` / integer labels ``[B]`` (classification) or
per-pixel scores ``[B, K, N, N]`` / label maps ``[B, N, N]`` (segmentation).
Tensor outputs are unwrapped automatically.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .polyphase import check_even

Model = Callable[[np.ndarray], object]


@dataclass
class ConsistencyReport:
    metric: str
    n_images: int
    n_pairs_per_image: int
    agreement: float
    max_residual: float
    per_image: List[float] = field(default_factory=list)

    def to_json(self, **kwargs) -> str:
        return json.dumps(asdict(self), **kwargs)

    def table(self) -> str:
        rows = [("metric", self.metric), ("images", self.n_images),
                ("pairs/image", self.n_pairs_per_image),
                ("agreement", f"{self.agreement:.6f}"),
                ("max residual", f"{self.max_residual:.3e}")]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _np(out) -> np.ndarray:
    return np.asarray(getattr(out, "data", out))


def _labels(out: np.ndarray, score_ndim: int) -> np.ndarray:
    return np.argmax(out, axis=1) if out.ndim == score_ndim else out


def _roll(a: np.ndarray, s1: int, s2: int) -> np.ndarray:
    return np.roll(a, (-s1, -s2), axis=(-2, -1))


def _check_images(images, even: bool = True):
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("no images to evaluate")
    if images.ndim != 4:
        raise ValueError(f"expected images [B, C, N, N], got {images.shape}")
    if even:
        check_even(images.shape)
    return images


def _sample_shifts(rng, count, n1, n2, shift_range):
    hi1 = n1 if shift_range is None else shift_range
    hi2 = n2 if shift_range is None else shift_range
    return np.stack([rng.integers(0, hi1, count), rng.integers(0, hi2, count)], axis=1)


def c_cons(model: Model, images, shift_range: Optional[int] = None, pairs_per_image: int = 5,
           rng: Optional[np.random.Generator] = None) -> ConsistencyReport:
    """Fraction of (image, shift pair) draws with equal predicted labels.

    Shifts are uniform on ``0..shift_range-1`` (full period by default).
    """
    images = _check_images(images)
    rng = np.random.default_rng(0) if rng is None else rng
    n1, n2 = images.shape[2:]
    per_image, residual = [], 0.0
    for img in images:
        s = _sample_shifts(rng, 2 * pairs_per_image, n1, n2, shift_range)
        a = np.stack([_roll(img, *s[2 * p]) for p in range(pairs_per_image)])
        b = np.stack([_roll(img, *s[2 * p + 1]) for p in range(pairs_per_image)])
        out_a, out_b = _np(model(a)), _np(model(b))
        if out_a.ndim == 2:
            residual = max(residual, float(np.max(np.abs(out_a - out_b))))
        per_image.append(float(np.mean(_labels(out_a, 2) == _labels(out_b, 2))))
    return ConsistencyReport("c_cons", len(images), pairs_per_image,
                             float(np.mean(per_image)), residual, per_image)


def s_cons(model: Model, images, max_shift: int, pairs_per_image: int = 5,
           rng: Optional[np.random.Generator] = None,
           crop: Optional[int] = None) -> ConsistencyReport:
    """Standard (non-circular) shift consistency via shifted center crops.

    Each view takes a ``crop x crop`` window whose offset from the centred
    window is uniform in ``[-max_shift, max_shift]`` per axis. ``crop``
    defaults to ``N - 2*max_shift``.
    """
    images = _check_images(images, even=False)
    rng = np.random.default_rng(0) if rng is None else rng
    n1, n2 = images.shape[2:]
    crop = min(n1, n2) - 2 * max_shift if crop is None else crop
    if crop <= 0 or crop + 2 * max_shift > min(n1, n2):
        raise ValueError(f"crop {crop} with max shift {max_shift} does not fit in {(n1, n2)}")
    o1, o2 = (n1 - crop) // 2, (n2 - crop) // 2

    def view(img, d):
        return img[:, o1 + d[0]:o1 + d[0] + crop, o2 + d[1]:o2 + d[1] + crop]

    per_image, residual = [], 0.0
    for img in images:
        d = rng.integers(-max_shift, max_shift + 1, size=(2 * pairs_per_image, 2))
        a = np.stack([view(img, d[2 * p]) for p in range(pairs_per_image)])
        b = np.stack([view(img, d[2 * p + 1]) for p in range(pairs_per_image)])
        out_a, out_b = _np(model(a)), _np(model(b))
        if out_a.ndim == 2:
            residual = max(residual, float(np.max(np.abs(out_a - out_b))))
        per_image.append(float(np.mean(_labels(out_a, 2) == _labels(out_b, 2))))
    return ConsistencyReport("s_cons", len(images), pairs_per_image,
                             float(np.mean(per_image)), residual, per_image)


def mascc(seg_model: Model, images, pairs_per_image: int = 5,
          rng: Optional[np.random.Generator] = None) -> ConsistencyReport:
    """Mean per-pixel agreement of un-shifted predictions under two circular shifts."""
    images = _check_images(images)
    rng = np.random.default_rng(0) if rng is None else rng
    n1, n2 = images.shape[2:]
    per_image, residual = [], 0.0
    for img in images:
        s = _sample_shifts(rng, 2 * pairs_per_image, n1, n2, None)
        batch = np.stack([_roll(img, *sh) for sh in s])
        out = _np(seg_model(batch))
        if out.shape[-2:] != (n1, n2):
            raise ValueError(f"prediction extent {out.shape[-2:]} != input extent {(n1, n2)}")
        back = np.stack([_roll(out[q], -s[q][0], -s[q][1]) for q in range(len(s))])
        if back.ndim == 4:
            residual = max(residual, float(np.max(np.abs(back[0::2] - back[1::2]))))
        labels = _labels(back, 4)
        per_image.append(float(np.mean(labels[0::2] == labels[1::2])))
    return ConsistencyReport("mascc", len(images), pairs_per_image,
                             float(np.mean(per_image)), residual, per_image)


def equivariance_residual(f: Callable, x, shift) -> float:
    """``max |f(roll(x, s)) - roll(f(x), s)|``."""
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    s1, s2 = shift
    out = _np(f(x))
    out_shifted = _np(f(_roll(x, s1, s2)))
    if out.shape != out_shifted.shape:
        raise ValueError(f"output shapes differ: {out.shape} vs {out_shifted.shape}")
    if out.shape[-2:] != x.shape[-2:]:
        raise ValueError("equivariance_residual needs a spatial-shape-preserving f")
    return float(np.max(np.abs(out_shifted - _roll(out, s1, s2))))
