"""SGD with heavy-ball momentum, Gumbel temperature schedules and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import functional as F
from .nets import SimpleClassifier, is_selector_param
from .sampling import SamplerMode
from .tensor import Tensor, backward

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_excludes_selector: bool = True
    lr_step_epochs: int = 30
    lr_step_factor: float = 0.1

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_step_factor ** (epoch // self.lr_step_epochs)


@dataclass
class TauSchedule:
    """Gumbel-softmax temperature per epoch.

    ``step_decay``: ``max(minimum, initial * factor ** (epoch // step))``.
    ``multistep_linear``: piecewise-linear between ``(epoch_fraction, tau)``
    milestones, where epoch ``e`` (0-based) sits at fraction ``(e+1)/total``.
    """

    kind: str = "step_decay"
    initial: float = 1.0
    decay_step: int = 10
    decay_factor: float = 0.85
    minimum: float = 0.025
    milestones: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("step_decay", "multistep_linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "step_decay":
            if not (self.initial > 0 and self.minimum > 0 and 0 < self.decay_factor <= 1):
                raise ValueError("step decay needs positive initial/minimum and factor in (0, 1]")
        else:
            if not self.milestones:
                raise ValueError("multistep_linear schedule needs at least one milestone")
            taus = [t for _, t in self.milestones]
            fracs = [f for f, _ in self.milestones]
            if min(taus) <= 0 or any(b > a for a, b in zip(taus, taus[1:])):
                raise ValueError("milestone temperatures must be positive and non-increasing")
            if any(b <= a for a, b in zip(fracs, fracs[1:])):
                raise ValueError("milestone fractions must be strictly increasing")

    @classmethod
    def imagenet_multistep(cls) -> "TauSchedule":
        return cls(kind="multistep_linear",
                   milestones=[(1 / 90, 1.0), (62 / 90, 0.5), (82 / 90, 0.05), (1.0, 0.01)])


def tau_at(schedule: TauSchedule, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if schedule.kind == "step_decay":
        return max(schedule.minimum,
                   schedule.initial * schedule.decay_factor ** (epoch // schedule.decay_step))
    fracs, taus = zip(*schedule.milestones)
    return float(np.interp((epoch + 1) / total_epochs, fracs, taus))


Params = Dict[str, Tensor]


def sgd_step(params: Params, grads: Dict[str, np.ndarray], state: Dict[str, np.ndarray],
             cfg: OptimizerConfig, lr: Optional[float] = None) -> Tuple[Params, Dict[str, np.ndarray]]:
    """One heavy-ball step: ``v = m*v + g + wd*w``, ``w = w - lr*v``.

    Returns fresh parameter tensors and velocity buffers; inputs are untouched.
    """
    lr = cfg.lr if lr is None else lr
    new_params, new_state = {}, {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        wd = 0.0 if cfg.decay_excludes_selector and is_selector_param(name) else cfg.weight_decay
        v = g + wd * w.data
        if name in state:
            v = cfg.momentum * state[name] + v
        new_state[name] = v
        new_params[name] = Tensor(w.data - lr * v, requires_grad=True)
    return new_params, new_state


@dataclass
class EpochLog:
    epoch: int
    loss: float
    acc: float
    tau: float
    lr: float

    CSV_HEADER = "epoch,loss,acc,tau,lr"

    def csv_row(self) -> str:
        return f"{self.epoch},{self.loss:.10g},{self.acc:.10g},{self.tau:.10g},{self.lr:.10g}"


class TrainingDiverged(RuntimeError):
    pass


def accuracy(model: SimpleClassifier, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    preds = np.concatenate([model.predict(images[i:i + batch_size])
                            for i in range(0, len(images), batch_size)])
    return float(np.mean(preds == labels))


def train(model: SimpleClassifier, images: np.ndarray, labels: np.ndarray, epochs: int,
          cfg: OptimizerConfig, schedule: TauSchedule, rng: np.random.Generator,
          batch_size: int = 16, sampling: str = "gumbel",
          eval_set: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> List[EpochLog]:
    """Train ``model`` in place (its ``params`` are replaced) and return per-epoch logs.

    ``sampling`` picks the relaxation used during training: ``"gumbel"`` or
    ``"softmax"``. Accuracy is measured in eval (hard argmax) mode on
    ``eval_set`` when given, otherwise on the training data.
    """
    if len(images) == 0:
        raise ValueError("empty training set")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    if sampling not in ("gumbel", "softmax"):
        raise ValueError(f"sampling must be 'gumbel' or 'softmax', got {sampling!r}")
    labels = np.asarray(labels, dtype=np.int64)
    state: Dict[str, np.ndarray] = {}
    history = []
    for epoch in range(epochs):
        tau = tau_at(schedule, epoch, epochs)
        lr = cfg.lr_at(epoch)
        mode = SamplerMode.gumbel(tau) if sampling == "gumbel" else SamplerMode.softmax(tau)
        order = rng.permutation(len(images))
        total, seen = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            params = {k: Tensor(v.data, requires_grad=True) for k, v in model.params.items()}
            model.params = params
            loss = F.cross_entropy(model.forward(images[idx], mode, rng), labels[idx])
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"loss became {loss.item()} at epoch {epoch}")
            backward(loss)
            model.params, state = sgd_step(params, {k: p.grad for k, p in params.items()},
                                           state, cfg, lr)
            total += loss.item() * len(idx)
            seen += len(idx)
        acc = accuracy(model, *(eval_set if eval_set is not None else (images, labels)))
        entry = EpochLog(epoch, total / seen, acc, tau, lr)
        log.info("epoch %d loss %.4f acc %.4f tau %.4f lr %.4g", epoch, entry.loss, acc, tau, lr)
        history.append(entry)
    return history
