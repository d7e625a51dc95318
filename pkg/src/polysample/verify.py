"""Numerical checks of the shift properties of the sampling layers.

Every check runs a batch built from all ``N*N`` circular shifts of its inputs
through the layer under test, then compares each shifted result against the
prediction made from the unshifted one. Residuals are max-abs differences, so
a correct implementation reports exactly ``0.0``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import functional as F
from .nets import ClassifierSpec, SimpleClassifier, SimpleUNet, UNetSpec
from .polyphase import check_even, decompose, permutation_of_shift
from .sampling import aps, lpd, lpu, make_filter
from .selection import LearnedSelector, NormSelector, SelectorWeights, ptheta
from .tensor import Tensor

TOLERANCE = 1e-9
# images per forward call; small enough that a toy net's activations stay in cache
CHUNK = 64


def all_shifts(n1: int, n2: int) -> np.ndarray:
    """``[n1*n2, 2]`` array of shifts, ``(0, 0)`` first."""
    return np.stack(np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij"), -1).reshape(-1, 2)


def _roll(a: np.ndarray, s1: int, s2: int) -> np.ndarray:
    return np.roll(a, (-s1, -s2), axis=(-2, -1))


def shifted_batch(x: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Stack ``roll(x, s)`` for every shift: ``[S*B, C, N, N]``, shift-major."""
    return np.concatenate([_roll(x, *s) for s in shifts])


def _prepare(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected [B, C, N, N], got {x.shape}")
    check_even(x.shape)
    return x


def _forward_chunked(f: Callable, batch: np.ndarray, chunk: int = CHUNK) -> np.ndarray:
    """``f`` over ``batch`` in slices; per-sample ops make the result independent of slicing."""
    parts = [getattr(o, "data", o) for o in (f(Tensor(batch[i:i + chunk]))
                                            for i in range(0, len(batch), chunk))]
    return np.concatenate(parts)


def _per_shift(out: np.ndarray, n_shifts: int) -> np.ndarray:
    return out.reshape((n_shifts, -1) + out.shape[1:])


def polyphase_permutation_residual(x, shifts: Optional[np.ndarray] = None) -> float:
    """Checks ``decompose(roll(x, s))[perm[k]] == roll(decompose(x)[k], residual[k])``."""
    x = _prepare(x)
    shifts = all_shifts(*x.shape[2:]) if shifts is None else shifts
    base = [c.data for c in decompose(Tensor(x)).components]
    worst = 0.0
    for s in shifts:
        act = permutation_of_shift(*s)
        moved = decompose(Tensor(_roll(x, *s))).components
        for k in range(4):
            expect = _roll(base[k], *act.residual[k])
            worst = max(worst, float(np.max(np.abs(moved[act.perm[k]].data - expect))))
    return worst


def lpd_equivariance_residual(x, selector) -> float:
    """LPD output of a shifted input equals the rolled output of the original."""
    x = _prepare(x)
    shifts = all_shifts(*x.shape[2:])
    y, dist = lpd(Tensor(shifted_batch(x, shifts)), selector)
    y = _per_shift(y.data, len(shifts))
    k0 = dist.k_star[:len(x)]
    worst = 0.0
    for si, s in enumerate(shifts):
        act = permutation_of_shift(*s)
        for b in range(len(x)):
            expect = _roll(y[0, b], *act.residual[k0[b]])
            worst = max(worst, float(np.max(np.abs(y[si, b] - expect))))
    return worst


def ptheta_permutation_residual(x, weights: SelectorWeights) -> float:
    """Selection probabilities of a shifted input are the permuted originals."""
    x = _prepare(x)
    shifts = all_shifts(*x.shape[2:])
    probs = _per_shift(ptheta(decompose(Tensor(shifted_batch(x, shifts))), weights).probs.data,
                       len(shifts))
    worst = 0.0
    for si, s in enumerate(shifts):
        expect = permutation_of_shift(*s).apply(probs[0])
        worst = max(worst, float(np.max(np.abs(probs[si] - expect))))
    return worst


def aps_agreement(x, ord: float = 2) -> float:
    """Fraction of samples where norm-driven LPD and APS pick the same component."""
    x = F.as_tensor(_prepare(x))
    _, dist = lpd(x, NormSelector(ord))
    _, k_aps = aps(x, ord)
    return float(np.mean(dist.k_star == k_aps))


def _equivariance_residual(f: Callable[[Tensor], Tensor], x: np.ndarray) -> float:
    shifts = all_shifts(*x.shape[2:])
    out = _per_shift(_forward_chunked(f, shifted_batch(x, shifts)), len(shifts))
    return max(float(np.max(np.abs(out[si] - _roll(out[0], *s)))) for si, s in enumerate(shifts))


def lpu_lpd_residual(x, selector, filter_name: Optional[str] = "tri3") -> float:
    """``lpu(lpd(.))`` commutes with circular shifts."""
    x = _prepare(x)
    filt = make_filter(filter_name) if filter_name else None

    def f(t):
        y, dist = lpd(t, selector)
        return lpu(y, dist, t.shape[2:], filt=filt)

    return _equivariance_residual(f, x)


def classifier_invariance(model: SimpleClassifier, x):
    """Returns ``(max logit deviation, label agreement)`` over all shifts."""
    x = _prepare(x)
    shifts = all_shifts(*x.shape[2:])
    logits = _per_shift(_forward_chunked(model.forward, shifted_batch(x, shifts)), len(shifts))
    residual = float(np.max(np.abs(logits - logits[0])))
    labels = np.argmax(logits, axis=-1)
    return residual, float(np.mean(labels == labels[0]))


def unet_equivariance_residual(model: SimpleUNet, x) -> float:
    return _equivariance_residual(model.forward, _prepare(x))


@dataclass
class PropertyResult:
    name: str
    max_residual: float
    instances: int
    passed: bool


@dataclass
class VerifyReport:
    extent: int
    trials: int
    seed: int
    tolerance: float
    results: List[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failing(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def run_suite(extent: int = 16, trials: int = 3, seed: int = 0, channels: int = 3,
              feature_channels: int = 4, tolerance: float = TOLERANCE) -> VerifyReport:
    """Run every property on ``trials`` random instances at the given extent."""
    check_even((extent, extent), "extent")
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    rng = np.random.default_rng(seed)
    report = VerifyReport(extent, trials, seed, tolerance)
    worst: Dict[str, float] = {}

    def record(name, value):
        worst[name] = max(worst.get(name, 0.0), value)

    for _ in range(trials):
        x = rng.normal(size=(2, channels, extent, extent))
        w = SelectorWeights.init(channels, rng=rng)
        record("polyphase_permutation", polyphase_permutation_residual(x))
        record("ptheta_permutation", ptheta_permutation_residual(x, w))
        record("lpd_equivariance", lpd_equivariance_residual(x, LearnedSelector(w)))
        record("aps_equivalence", 1.0 - aps_agreement(x))
        record("lpu_lpd_equivariance", lpu_lpd_residual(x, LearnedSelector(w)))
        clf = SimpleClassifier(ClassifierSpec(in_channels=channels,
                                              feature_channels=feature_channels), rng=rng)
        residual, agree = classifier_invariance(clf, x)
        record("classifier_invariance", residual)
        record("classifier_label_agreement", 1.0 - agree)
        unet = SimpleUNet(UNetSpec(in_channels=channels, feature_channels=feature_channels), rng=rng)
        record("unet_equivariance", unet_equivariance_residual(unet, x))
    for name, value in worst.items():
        report.results.append(PropertyResult(name, value, trials, bool(value <= tolerance)))
    return report
