"""Dense float64 tensors with a small reverse-mode tape.

Every op lives in :mod:`polysample.functional`; this module only holds the
value type, the tape bookkeeping and the finite-difference checker.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

MAX_RANK = 4

_check_finite = False


def set_finite_checks(enabled: bool) -> None:
    """Assert that every forward op yields finite data (debug aid)."""
    global _check_finite
    _check_finite = bool(enabled)


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        data = np.array(data, dtype=np.float64)
        if data.ndim > MAX_RANK:
            raise ValueError(f"rank {data.ndim} exceeds {MAX_RANK}")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    def __sub__(self, other):
        from . import functional as F
        return F.add(self, F.scale(other, -1.0))

    def __neg__(self):
        from . import functional as F
        return F.scale(self, -1.0)

    def __mul__(self, other):
        from . import functional as F
        if isinstance(other, Tensor):
            return F.mul(self, other)
        return F.scale(self, float(other))

    __rmul__ = __mul__

    def backward(self) -> None:
        backward(self)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], op: str,
                backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap an op's forward output, recording a tape node only when needed."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    if out.data.ndim > MAX_RANK:
        raise ValueError(f"{op}: rank {out.data.ndim} exceeds {MAX_RANK}")
    if _check_finite and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    out.grad = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.node = TapeNode(op, tuple(inputs), backward_fn) if out.requires_grad else None
    return out


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor requiring grad")
    order = _topological_order(loss)
    leaves = [t for t in order if t.node is None]
    if any(t.grad is not None for t in leaves):
        raise RuntimeError("gradients already populated; call zero_grad() before a second backward")

    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for t in leaves:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


TensorArgs = Union[Tensor, Sequence[Tensor]]


def grad_check(f: Callable[..., Tensor], x: TensorArgs, h: float = 1e-6) -> float:
    """Max relative error between taped gradients and central differences.

    ``f`` is called as ``f(*xs)`` and must return a scalar tensor. The error
    for each coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    leaves = [Tensor(t.data.copy(), requires_grad=True) for t in xs]
    out = f(*leaves)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out)

    worst = 0.0
    for i, leaf in enumerate(leaves):
        base = leaf.data
        flat = base.reshape(-1)
        for j in range(flat.size):
            args = [Tensor(t.data) for t in leaves]
            bumped = flat.copy()
            bumped[j] += h
            args[i] = Tensor(bumped.reshape(base.shape))
            up = f(*args).item()
            bumped[j] -= 2 * h
            args[i] = Tensor(bumped.reshape(base.shape))
            down = f(*args).item()
            numeric = (up - down) / (2 * h)
            analytic = leaf.grad.reshape(-1)[j]
            worst = max(worst, abs(analytic - numeric) / max(1.0, abs(numeric)))
    return worst
