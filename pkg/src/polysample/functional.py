"""Differentiable ops over :class:`~polysample.tensor.Tensor`.

Shapes follow ``[B, C, N1, N2]``. There is no implicit broadcasting: the only
place a smaller operand is expanded is bias addition inside ``conv2d`` and
``linear``.

Reductions that feed a shift-invariance guarantee (global pooling, norms,
softmax denominators) sort their operands before summing so that any
permutation of the same values yields a bit-identical result.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

PAD_MODES = ("circular", "zero")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def invariant_sum(a: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Sum over ``axes`` in an order that depends only on the multiset of values."""
    axes = tuple(ax % a.ndim for ax in axes)
    keep = [ax for ax in range(a.ndim) if ax not in axes]
    moved = np.transpose(a, keep + list(axes))
    flat = moved.reshape(moved.shape[:len(keep)] + (-1,))
    return np.sort(flat, axis=-1).sum(axis=-1)


def _check_same_shape(op, x, y):
    if x.shape != y.shape:
        raise ValueError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


# -- elementwise -----------------------------------------------------------

def add(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _check_same_shape("add", x, y)
    return make_result(x.data + y.data, (x, y), "add", lambda g: (g, g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _check_same_shape("mul", x, y)
    return make_result(x.data * y.data, (x, y), "mul",
                       lambda g: (g * y.data, g * x.data))


def scale(x: Tensor, a: float) -> Tensor:
    x = as_tensor(x)
    a = float(a)
    return make_result(x.data * a, (x,), "scale", lambda g: (g * a,))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), "reshape",
                       lambda g: (g.reshape(src),))


# -- reductions ------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return make_result(np.sum(x.data), (x,), "sum_all",
                       lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return make_result(np.sum(x.data) / n, (x,), "mean_all",
                       lambda g: (np.full(x.shape, float(g) / n),))


def global_avg_pool(x: Tensor) -> Tensor:
    """``[B, C, N1, N2] -> [B, C]`` spatial mean."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects rank 4, got {x.shape}")
    n = x.shape[2] * x.shape[3]
    out = invariant_sum(x.data, (2, 3)) / n
    return make_result(out, (x,), "global_avg_pool",
                       lambda g: (np.broadcast_to(g[:, :, None, None] / n, x.shape).copy(),))


def mean_per_sample(x: Tensor) -> Tensor:
    """``[B, ...] -> [B]`` mean over everything but the batch axis."""
    x = as_tensor(x)
    axes = tuple(range(1, x.ndim))
    n = int(np.prod(x.shape[1:]))
    out = invariant_sum(x.data, axes) / n
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    return make_result(out, (x,), "mean_per_sample",
                       lambda g: (np.broadcast_to(g.reshape(shape) / n, x.shape).copy(),))


# -- dense layers ----------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` with ``x: [B, D]``, ``w: [K, D]``, ``b: [K]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    out = x.data @ w.data.T
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b.data
        inputs.append(b)

    def back(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return make_result(out, inputs, "linear", back)


def softmax(v: Tensor) -> Tensor:
    """Softmax over the last axis."""
    v = as_tensor(v)
    e = np.exp(v.data - v.data.max(axis=-1, keepdims=True))
    p = e / invariant_sum(e, (-1,))[..., None]

    def back(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return make_result(p, (v,), "softmax", back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood; ``logits: [B, K]`` (or ``[K]``)."""
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = z.shape
    if labels.shape != (n,):
        raise ValueError(f"cross_entropy: {labels.shape[0]} labels for batch of {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"cross_entropy: label out of range [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        d *= float(g) / n
        return (d[0] if single else d,)

    return make_result(loss, (logits,), "cross_entropy", back)


# -- spatial ---------------------------------------------------------------

def _pad(a: np.ndarray, p: int, mode: str, axes=(-2, -1)) -> np.ndarray:
    if p == 0:
        return a
    if mode == "zero":
        width = [(0, 0)] * a.ndim
        for ax in axes:
            width[ax] = (p, p)
        return np.pad(a, width)
    # np.pad(mode="wrap") is several times slower than concatenation
    for ax in axes:
        a = np.concatenate([_axis_slice(a, ax, -p, None), a, _axis_slice(a, ax, 0, p)], axis=ax)
    return a


def _axis_slice(a: np.ndarray, axis: int, start, stop) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def _fold_matrix(n: int, p: int) -> np.ndarray:
    m = np.zeros((n + 2 * p, n))
    m[np.arange(n + 2 * p), (np.arange(n + 2 * p) - p) % n] = 1.0
    return m


def _unpad(g: np.ndarray, p: int, mode: str, n1: int, n2: int, axes=(-2, -1)) -> np.ndarray:
    """Adjoint of :func:`_pad`."""
    if p == 0:
        return g
    if mode == "zero":
        idx = [slice(None)] * g.ndim
        idx[axes[0]] = slice(p, p + n1)
        idx[axes[1]] = slice(p, p + n2)
        return g[tuple(idx)]
    for ax, n in zip(axes, (n1, n2)):
        g = np.moveaxis(np.tensordot(np.moveaxis(g, ax, -1), _fold_matrix(n, p), axes=([-1], [0])), -1, ax)
    return g


def _check_mode(mode):
    if mode not in PAD_MODES:
        raise ValueError(f"pad_mode must be one of {PAD_MODES}, got {mode!r}")


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, pad_mode: str = "circular") -> Tensor:
    """2D cross-correlation.

    Every output element is computed by the same sequence of floating-point
    operations regardless of its position, so circular mode commutes
    bit-exactly with :func:`roll`.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_mode(pad_mode)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects rank-4 input and weight, got {x.shape}, {w.shape}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    b_, c, n1, n2 = x.shape
    c_out, c_in, k1, k2 = w.shape
    if c_in != c:
        raise ValueError(f"conv2d: weight expects {c_in} input channels, input has {c}")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    if pad_mode == "circular" and (padding >= n1 or padding >= n2) and padding > 0:
        raise ValueError(f"circular padding {padding} must be smaller than extent {(n1, n2)}")
    h_out = (n1 + 2 * padding - k1) // stride + 1
    w_out = (n2 + 2 * padding - k2) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ValueError("conv2d: kernel larger than padded input")

    if stride == 1:
        out, back_xw = _conv_taps(x.data, w.data, padding, pad_mode)
    else:
        out, back_xw = _conv_im2col(x.data, w.data, stride, padding, pad_mode, h_out, w_out)
    inputs = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    def back(g):
        grads = list(back_xw(g))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(out, inputs, "conv2d", back)


def _conv_taps(x, w, padding, pad_mode):
    """Stride-1 conv as one contiguous GEMM per kernel tap.

    The padded channels-last input is flattened to ``[B*P1*P2, C]``; tap
    ``(a, d)`` then reads rows shifted by ``a*P2 + d``. Rows that straddle a
    padded edge are computed and discarded. Taps are accumulated in a fixed
    order, so every output element sees the same arithmetic.
    """
    b_, c, n1, n2 = x.shape
    c_out, _, k1, k2 = w.shape
    xp = np.ascontiguousarray(_pad(x.transpose(0, 2, 3, 1), padding, pad_mode, axes=(1, 2)))
    p1, p2 = xp.shape[1:3]
    h_out, w_out = p1 - k1 + 1, p2 - k2 + 1
    flat = xp.reshape(-1, c)
    rows = flat.shape[0] - ((k1 - 1) * p2 + (k2 - 1))
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # [k1, k2, C_in, C_out]
    acc = np.zeros((flat.shape[0], c_out))
    live, term = acc[:rows], np.empty((rows, c_out))
    for a in range(k1):
        for d in range(k2):
            off = a * p2 + d
            np.matmul(flat[off:off + rows], wt[a, d], out=term)
            live += term
    out = acc.reshape(b_, p1, p2, c_out)[:, :h_out, :w_out].transpose(0, 3, 1, 2)

    def back(g):
        gfull = np.zeros((b_, p1, p2, c_out))
        gfull[:, :h_out, :w_out] = g.transpose(0, 2, 3, 1)
        gflat = gfull.reshape(-1, c_out)[:rows]
        gw = np.empty((k1, k2, c, c_out))
        gxp = np.zeros_like(flat)
        for a in range(k1):
            for d in range(k2):
                off = a * p2 + d
                gw[a, d] = flat[off:off + rows].T @ gflat
                gxp[off:off + rows] += gflat @ wt[a, d].T
        gx = _unpad(gxp.reshape(b_, p1, p2, c), padding, pad_mode, n1, n2, axes=(1, 2))
        return np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), np.ascontiguousarray(gw.transpose(3, 2, 0, 1))

    return np.ascontiguousarray(out), back


def _conv_im2col(x, w, stride, padding, pad_mode, h_out, w_out):
    """Strided conv via channels-last im2col; rows hold ``(k1, k2, C_in)`` in a fixed order."""
    b_, c, n1, n2 = x.shape
    c_out, _, k1, k2 = w.shape
    xp = _pad(x.transpose(0, 2, 3, 1), padding, pad_mode, axes=(1, 2))
    win = sliding_window_view(xp, (k1, k2), axis=(1, 2))[:, ::stride, ::stride][:, :h_out, :w_out]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, k1 * k2 * c)
    wmat = w.transpose(2, 3, 1, 0).reshape(k1 * k2 * c, c_out)
    out = (cols @ wmat).reshape(b_, h_out, w_out, c_out).transpose(0, 3, 1, 2)

    def back(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (gflat.T @ cols).reshape(c_out, k1, k2, c).transpose(0, 3, 1, 2)
        gcols = (gflat @ wmat.T).reshape(b_, h_out, w_out, k1, k2, c)
        gxp = np.zeros_like(xp)
        for di in range(k1):
            for dj in range(k2):
                gxp[:, di:di + stride * h_out:stride, dj:dj + stride * w_out:stride] += gcols[:, :, :, di, dj]
        gx = _unpad(gxp, padding, pad_mode, n1, n2, axes=(1, 2)).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(gx), np.ascontiguousarray(gw)

    return np.ascontiguousarray(out), back


def _roll_np(a: np.ndarray, s1: int, s2: int) -> np.ndarray:
    # out[n] = a[(n + s) mod N]
    return np.roll(a, (-s1, -s2), axis=(-2, -1))


def roll(x: Tensor, s1: int, s2: int = 0) -> Tensor:
    """Circular shift: ``out[..., n1, n2] = x[..., (n1+s1) % N1, (n2+s2) % N2]``.

    Rank-1 input is treated as a single row (only ``s1`` applies).
    """
    x = as_tensor(x)
    if x.ndim == 0:
        raise ValueError("roll needs spatial dims")
    if x.ndim == 1:
        out = np.roll(x.data, -s1)
        return make_result(out, (x,), "roll", lambda g: (np.roll(g, s1),))
    out = _roll_np(x.data, s1, s2)
    return make_result(out, (x,), "roll", lambda g: (_roll_np(g, -s1, -s2),))


def max_filter_2x2(x: Tensor, pad_mode: str = "circular") -> Tensor:
    """Stride-1 2x2 max anchored at each pixel, extent preserving.

    Window at ``(n1, n2)`` covers ``n1..n1+1`` and ``n2..n2+1``; circular mode
    wraps, zero mode pads the far edges with zeros.
    """
    x = as_tensor(x)
    _check_mode(pad_mode)
    if x.ndim != 4:
        raise ValueError(f"max_filter_2x2 expects rank 4, got {x.shape}")
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ValueError("max_filter_2x2 needs extents >= 2")
    offsets = ((0, 0), (0, 1), (1, 0), (1, 1))
    if pad_mode == "circular":
        cands = np.stack([_roll_np(x.data, a, b) for a, b in offsets])
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (0, 1), (0, 1)))
        n1, n2 = x.shape[2:]
        cands = np.stack([xp[:, :, a:a + n1, b:b + n2] for a, b in offsets])
    which = np.argmax(cands, axis=0)
    out = np.take_along_axis(cands, which[None], axis=0)[0]

    def back(g):
        gx = np.zeros_like(x.data)
        for idx, (a, b) in enumerate(offsets):
            part = np.where(which == idx, g, 0.0)
            if pad_mode == "circular":
                gx += _roll_np(part, -a, -b)
            else:
                padded = np.zeros(xp.shape)
                padded[:, :, a:a + n1, b:b + n2] = part
                gx += padded[:, :, :n1, :n2]
        return (gx,)

    return make_result(out, (x,), "max_filter_2x2", back)


def separable_filter(x: Tensor, taps: np.ndarray, pad_mode: str = "circular") -> Tensor:
    """Apply a 1D kernel along both spatial axes, stride 1, extent preserving.

    ``out[n] = sum_t taps[t] * x[n + t - (len-1)//2]`` on each axis; terms are
    accumulated in tap order.
    """
    x = as_tensor(x)
    _check_mode(pad_mode)
    taps = np.asarray(taps, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"separable_filter expects rank 4, got {x.shape}")
    n1, n2 = x.shape[2:]
    k = taps.size
    if pad_mode == "circular" and (k > n1 or k > n2):
        raise ValueError(f"filter with {k} taps longer than extent {(n1, n2)}")
    lo = (k - 1) // 2

    def along(a, axis, coeffs):
        n = a.shape[axis]
        width = [(0, 0)] * a.ndim
        width[axis] = (lo, k - 1 - lo)
        if pad_mode == "circular":
            ap = np.concatenate([_axis_slice(a, axis, n - lo, None), a,
                                 _axis_slice(a, axis, 0, k - 1 - lo)], axis=axis)
        else:
            ap = np.pad(a, width)
        acc = None
        for t in range(k):
            term = coeffs[t] * _axis_slice(ap, axis, t, t + n)
            acc = term if acc is None else acc + term
        return acc

    def along_adjoint(g, axis, coeffs):
        n = g.shape[axis]
        shape = list(g.shape)
        shape[axis] = n + k - 1
        gp = np.zeros(shape)
        for t in range(k):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(t, t + n)
            gp[tuple(idx)] += coeffs[t] * g
        if pad_mode == "circular":
            fold = np.zeros((n + k - 1, n))
            fold[np.arange(n + k - 1), (np.arange(n + k - 1) - lo) % n] = 1.0
        else:
            fold = np.zeros((n + k - 1, n))
            fold[np.arange(lo, lo + n), np.arange(n)] = 1.0
        return np.moveaxis(np.tensordot(np.moveaxis(gp, axis, -1), fold, axes=([-1], [0])), -1, axis)

    out = along(along(x.data, 2, taps), 3, taps)

    def back(g):
        return (along_adjoint(along_adjoint(g, 3, taps), 2, taps),)

    return make_result(out, (x,), "separable_filter", back)


def upsample_nearest(x: Tensor) -> Tensor:
    """Repeat each pixel into a 2x2 block."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def back(g):
        b, c, h, w = g.shape
        return (g.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return make_result(out, (x,), "upsample_nearest", back)


# -- polyphase plumbing ----------------------------------------------------

def phase(x: Tensor, i: int, j: int) -> Tensor:
    """``x[..., i::2, j::2]``."""
    x = as_tensor(x)

    def back(g):
        gx = np.zeros_like(x.data)
        gx[..., i::2, j::2] = g
        return (gx,)

    return make_result(np.ascontiguousarray(x.data[..., i::2, j::2]), (x,), "phase", back)


def interleave(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape ``[B, ...]`` tensors batch-major: ``out[P*b + k] = parts[k][b]``."""
    parts = [as_tensor(p) for p in parts]
    shape = parts[0].shape
    for p in parts[1:]:
        _check_same_shape("interleave", parts[0], p)
    n = len(parts)
    stacked = np.stack([p.data for p in parts], axis=1)
    out = stacked.reshape((shape[0] * n,) + shape[1:])

    def back(g):
        g = g.reshape((shape[0], n) + shape[1:])
        return tuple(g[:, k] for k in range(n))

    return make_result(out, parts, "interleave", back)


def select_phase(parts: Sequence[Tensor], index: np.ndarray) -> Tensor:
    """Per-sample hard pick: ``out[b] = parts[index[b]][b]``."""
    parts = [as_tensor(p) for p in parts]
    index = np.asarray(index, dtype=np.int64)
    stacked = np.stack([p.data for p in parts], axis=1)
    rows = np.arange(stacked.shape[0])
    out = stacked[rows, index]

    def back(g):
        return tuple(np.where((index == k).reshape((-1,) + (1,) * (g.ndim - 1)), g, 0.0)
                     for k in range(len(parts)))

    return make_result(out, parts, "select_phase", back)


def mix_phases(parts: Sequence[Tensor], z: Tensor) -> Tensor:
    """Per-sample convex combination ``sum_k z[b, k] * parts[k][b]``."""
    parts = [as_tensor(p) for p in parts]
    z = as_tensor(z)
    n = len(parts)
    if z.ndim != 2 or z.shape != (parts[0].shape[0], n):
        raise ValueError(f"mix_phases: weights shape {z.shape} incompatible with {n} parts")
    expand = (slice(None),) + (None,) * (parts[0].ndim - 1)
    out = None
    for k in range(n):
        term = z.data[:, k][expand] * parts[k].data
        out = term if out is None else out + term

    def back(g):
        gparts = [z.data[:, k][expand] * g for k in range(n)]
        axes = tuple(range(1, g.ndim))
        gz = np.stack([np.sum(g * parts[k].data, axis=axes) for k in range(n)], axis=1)
        return tuple(gparts) + (gz,)

    return make_result(out, list(parts) + [z], "mix_phases", back)


def place_phases(y: Tensor, z: Tensor) -> Tensor:
    """Zero-stuff ``y`` onto the 4 phases of a map twice its size, scaled per sample.

    ``out[b, :, i::2, j::2] = z[b, 2i+j] * y[b]``.
    """
    y, z = as_tensor(y), as_tensor(z)
    b, c, m1, m2 = y.shape
    if z.shape != (b, 4):
        raise ValueError(f"place_phases: weights shape {z.shape} != ({b}, 4)")
    out = np.zeros((b, c, 2 * m1, 2 * m2))
    for k in range(4):
        i, j = divmod(k, 2)
        out[:, :, i::2, j::2] = z.data[:, k, None, None, None] * y.data

    def back(g):
        gy = np.zeros_like(y.data)
        gz = np.zeros((b, 4))
        for k in range(4):
            i, j = divmod(k, 2)
            gk = g[:, :, i::2, j::2]
            gy += z.data[:, k, None, None, None] * gk
            gz[:, k] = np.sum(gk * y.data, axis=(1, 2, 3))
        return gy, gz

    return make_result(out, (y, z), "place_phases", back)
