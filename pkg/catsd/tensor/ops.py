"""Differentiable primitives over :class:`~catsd.tensor.core.Tensor`."""

from __future__ import annotations

import logging
from typing import Any, Literal, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from catsd.exceptions import DomainError, ShapeError
from catsd.tensor.core import Tensor, as_tensor, custom_op

_logger = logging.getLogger(__name__)

Axis = Optional[Union[int, tuple[int, ...]]]
TemperatureLike = Union[float, Sequence[float], np.ndarray, None]


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Right-align two shapes; each aligned extent pair must match or contain a 1."""
    out: list[int] = []
    for i in range(1, max(len(a), len(b)) + 1):
        da = a[-i] if i <= len(a) else 1
        db = b[-i] if i <= len(b) else 1
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"Shapes {a} and {b} do not broadcast")
    return tuple(reversed(out))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after a broadcast."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# Elementwise


def add(a: Any, b: Any) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    broadcast_shape(x.shape, y.shape)
    return custom_op(
        "add",
        x.data + y.data,
        (x, y),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(a: Any, b: Any) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    broadcast_shape(x.shape, y.shape)
    return custom_op(
        "sub",
        x.data - y.data,
        (x, y),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
    )


def mul(a: Any, b: Any) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    broadcast_shape(x.shape, y.shape)
    return custom_op(
        "mul",
        x.data * y.data,
        (x, y),
        lambda g: (
            _unbroadcast(g * y.data, x.shape),
            _unbroadcast(g * x.data, y.shape),
        ),
    )


def scalar_mul(a: Any, k: float) -> Tensor:
    x = as_tensor(a)
    return custom_op("scalar-mul", x.data * k, (x,), lambda g: (g * k,))


def relu(a: Any) -> Tensor:
    x = as_tensor(a)
    mask = x.data > 0
    return custom_op("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log(a: Any) -> Tensor:
    x = as_tensor(a)
    if np.any(x.data <= 0):
        raise DomainError("log is only defined for strictly positive inputs")
    return custom_op("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(a: Any) -> Tensor:
    x = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return custom_op("exp", out, (x,), lambda g: (g * out,))


ElementwiseKind = Literal["add", "sub", "mul", "scalar-mul", "relu", "log", "exp"]


def elementwise(kind: ElementwiseKind, a: Any, b: Any = None) -> Tensor:
    """Dispatch an elementwise op by name; ``b`` is the scalar for ``scalar-mul``."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "scalar-mul":
        return scalar_mul(a, float(b))
    if kind == "relu":
        return relu(a)
    if kind == "log":
        return log(a)
    if kind == "exp":
        return exp(a)
    raise ValueError(f"Unknown elementwise op {kind!r}")


# Reductions and shape ops


def _normalize_axes(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(a: Any, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(a)
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return custom_op("sum", np.asarray(out), (x,), _backward)


def mean(a: Any, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(a)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[i] for i in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return custom_op("mean", np.asarray(out), (x,), _backward)


def reshape(a: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(a)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as err:
        raise ShapeError(f"Cannot reshape {x.shape} to {tuple(shape)}") from err
    return custom_op("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def getitem(a: Any, index: Any) -> Tensor:
    """Basic (slice/int) indexing."""
    x = as_tensor(a)
    out = x.data[index]

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(x.shape)
        full[index] += g
        return (full,)

    return custom_op("getitem", np.array(out), (x,), _backward)


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as err:
        raise ShapeError(str(err)) from err
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return custom_op(
        "concat", out, parts, lambda g: tuple(np.split(g, bounds, axis=axis))
    )


def l2_norm(a: Any, axis: Axis = None) -> Tensor:
    """Euclidean norm; the subgradient at the origin is taken as zero."""
    x = as_tensor(a)
    axes = _normalize_axes(axis, x.ndim)
    norm = np.sqrt(np.sum(x.data * x.data, axis=axes, keepdims=True))

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        g = np.expand_dims(g, axes)
        safe = np.where(norm > 0, norm, 1.0)
        return (np.where(norm > 0, g * x.data / safe, 0.0),)

    return custom_op("l2-norm", np.squeeze(norm, axis=axes), (x,), _backward)


# Convolution, pooling, resampling


def conv2d(input: Any, kernel: Any, bias: Any, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation on ``(n, c, h, w)`` or ``(c, h, w)`` input.

    1x1 kernels are evaluated output channel by output channel so that an
    output row depends only on its own kernel row, bit for bit.
    """
    x, w, b = as_tensor(input), as_tensor(kernel), as_tensor(bias)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d kernel and 3/4-d input, got {x.shape}, {w.shape}")
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"Kernel must be square with odd extent, got {k}x{k2}")
    if xd.shape[1] != c_in:
        raise ShapeError(f"Input has {xd.shape[1]} channels, kernel expects {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"Bias shape {b.shape} does not match {c_out} output channels")
    n, _, h, wd = xd.shape
    oh, ow = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"Kernel {k} with padding {padding} too large for {h}x{wd}")

    p = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    wd2 = w.data.reshape(c_out, -1)

    if k == 1:
        out = np.zeros((n, c_out, oh, ow))
        for c in range(c_in):
            out += w.data[None, :, c, 0, 0, None, None] * xp[:, c : c + 1]
        cols = None
    else:
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))
        cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * oh * ow, c_in * k * k
        )
        out = (cols @ wd2.T).reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    out = out + b.data[None, :, None, None]

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if squeeze:
            g = g[None]
        gb = g.sum(axis=(0, 2, 3))
        if cols is None:
            gxp = np.einsum("nohw,oc->nchw", g, wd2)
            gw = np.einsum("nohw,nchw->oc", g, xp).reshape(w.shape)
        else:
            gflat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
            gw = (gflat.T @ cols).reshape(w.shape)
            gcols = (gflat @ wd2).reshape(n, oh, ow, c_in, k, k)
            gxp = np.zeros(xp.shape)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + oh, j : j + ow] += gcols[..., i, j].transpose(
                        0, 3, 1, 2
                    )
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return (gx[0] if squeeze else gx), gw, gb

    return custom_op("conv2d", out[0] if squeeze else out, (x, w, b), _backward)


def pool2d(a: Any, window: int, mode: Literal["max", "mean"] = "mean") -> Tensor:
    """Non-overlapping pooling over the last two axes."""
    x = as_tensor(a)
    if x.ndim < 2:
        raise ShapeError("pool2d needs at least two axes")
    h, w = x.shape[-2:]
    if window < 1 or h % window or w % window:
        raise ShapeError(f"Window {window} does not tile {h}x{w}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(*lead, h // window, window, w // window, window)

    if mode == "mean":
        out = blocks.mean(axis=(-3, -1))

        def _backward(g: np.ndarray) -> tuple[np.ndarray]:
            spread = np.broadcast_to(
                g[..., :, None, :, None] / (window * window), blocks.shape
            )
            return (spread.reshape(x.shape).copy(),)

    elif mode == "max":
        flat = np.moveaxis(blocks, -3, -2).reshape(*lead, h // window, w // window, -1)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def _backward(g: np.ndarray) -> tuple[np.ndarray]:
            onehot = np.zeros(flat.shape)
            np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
            back = onehot.reshape(*lead, h // window, w // window, window, window)
            return (np.moveaxis(back, -2, -3).reshape(x.shape),)

    else:
        raise ValueError(f"Unknown pooling mode {mode!r}")

    return custom_op(f"pool2d-{mode}", out, (x,), _backward)


def _interp_axis(n_in: int, factor: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Neighbour indices and weights for half-pixel-centred linear resampling."""
    dst = np.arange(n_in * factor)
    src = np.clip((dst + 0.5) / factor - 0.5, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    return i0, i1, w1


def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    i0, i1, w1 = _interp_axis(n_in, factor)
    m = np.zeros((n_in * factor, n_in))
    rows = np.arange(n_in * factor)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def upsample_bilinear(a: Any, factor: int) -> Tensor:
    """Bilinear upsampling of the last two axes by an integer factor."""
    x = as_tensor(a)
    if factor < 1:
        raise ShapeError(f"Upsample factor must be positive, got {factor}")
    h, w = x.shape[-2:]
    r0, r1, rw = _interp_axis(h, factor)
    c0, c1, cw = _interp_axis(w, factor)

    rows = x.data[..., r0, :] * (1.0 - rw)[:, None] + x.data[..., r1, :] * rw[:, None]
    out = rows[..., c0] * (1.0 - cw) + rows[..., c1] * cw

    mh, mw = _interp_matrix(h, factor), _interp_matrix(w, factor)
    return custom_op("upsample", out, (x,), lambda g: (mh.T @ g @ mw,))


# Softmax family


def _temperature(temperature: TemperatureLike, ndim: int, axis: int, k: int) -> np.ndarray:
    if temperature is None:
        return np.ones(1)
    t = np.asarray(temperature, dtype=np.float64)
    if np.any(t <= 0):
        raise DomainError("Temperatures must be strictly positive")
    if t.ndim == 0:
        return t.reshape(1)
    if t.shape != (k,):
        raise ShapeError(f"Temperature vector of length {t.shape[0]} for {k} classes")
    shape = [1] * ndim
    shape[axis % ndim] = k
    return t.reshape(shape)


def softmax(logits: Any, temperature: TemperatureLike = None, axis: int = -1) -> Tensor:
    """Softmax of ``logits / temperature`` along ``axis``; temperatures may be per class."""
    x = as_tensor(logits)
    t = _temperature(temperature, x.ndim, axis, x.shape[axis])
    z = x.data / t
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        gz = s * (g - np.sum(g * s, axis=axis, keepdims=True))
        return (gz / t,)

    return custom_op("softmax", s, (x,), _backward)


def log_softmax(
    logits: Any, temperature: TemperatureLike = None, axis: int = -1
) -> Tensor:
    x = as_tensor(logits)
    t = _temperature(temperature, x.ndim, axis, x.shape[axis])
    z = x.data / t
    m = z.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))
    out = z - lse

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        gz = g - np.exp(out) * np.sum(g, axis=axis, keepdims=True)
        return (gz / t,)

    return custom_op("log-softmax", out, (x,), _backward)


def cross_entropy(logits: Any, labels: np.ndarray, axis: int = -3) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` over all non-class positions."""
    x = as_tensor(logits)
    k = x.shape[axis]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"Label ids must be in [0, {k})")
    onehot = np.moveaxis(np.eye(k)[labels], -1, axis % x.ndim)
    if onehot.shape != x.shape:
        raise ShapeError(f"Labels {labels.shape} do not match logits {x.shape}")
    logp = log_softmax(x, axis=axis)
    return scalar_mul(sum_(mul(logp, onehot)), -1.0 / labels.size)
