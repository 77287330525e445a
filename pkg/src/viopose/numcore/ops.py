"""Differentiable primitives.

Every function takes :class:`Tensor` (or array-like) operands and returns a
Tensor whose backward rule is registered on the active tape.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make

__all__ = [
    "add", "sub", "mul", "div", "matmul", "sum", "mean", "reshape", "transpose",
    "index", "concat", "relu", "gelu", "exp", "log", "sqrt", "square", "maximum",
    "where", "norm", "softmax", "layer_norm", "batch_norm_bt", "BatchNormState",
    "conv1d", "cumsum_time", "diff_time", "central_diff",
]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), bw, "div")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    u = x.data
    u2 = u * u
    t = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u2))
    out = 0.5 * u * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * u2)
        return (g * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner),)

    return make(out, (x,), bw, "gelu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def square(x) -> Tensor:
    x = as_tensor(x)
    return make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("maximum", a, b)
    pick_a = a.data >= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return make(np.where(pick_a, a.data, b.data), (a, b), bw, "maximum")


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape)

    return make(np.where(cond, a.data, b.data), (a, b), bw, "where")


def norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as zero."""
    x = as_tensor(x)
    n = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, gk * x.data / safe, 0.0),)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return make(out, (x,), bw, "norm")


# ----------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make(np.asarray(out), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make(np.asarray(out), (x,), bw, "mean")


# -------------------------------------------------------------------- layout

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def index(x, idx) -> Tensor:
    x = as_tensor(x)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    basic = _is_basic(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make(np.array(x.data[idx]), (x,), bw, "index")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(out, tuple(tensors), bw, "concat")


# ------------------------------------------------------------------ products

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: leading extents of {a.shape} and {b.shape} do not broadcast") from None

    if b.ndim == 2 and a.ndim > 2:
        # stacked rows times one matrix: fold the leading axes into a single GEMM
        k, n = b.shape
        a2 = a.data.reshape(-1, k)

        def bw(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return make((a2 @ b.data).reshape(a.shape[:-1] + (n,)), (a, b), bw, "matmul")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make(a.data @ b.data, (a, b), bw, "matmul")


# ------------------------------------------------------------- normalization

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make(y, (x,), bw, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} do not match last extent {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    red = tuple(range(x.ndim - 1))

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


class BatchNormState:
    """Running statistics for :func:`batch_norm_bt`."""

    def __init__(self, dim: int, momentum: float = 0.1):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.momentum = momentum
        self.initialized = False

    def update(self, mean: np.ndarray, var_unbiased: np.ndarray) -> None:
        if not self.initialized:
            # first batch replaces the placeholder values outright
            self.mean = mean.copy()
            self.var = var_unbiased.copy()
            self.initialized = True
        else:
            m = self.momentum
            self.mean = (1 - m) * self.mean + m * mean
            self.var = (1 - m) * self.var + m * var_unbiased


def batch_norm_bt(x, gamma, beta, state: BatchNormState, train: bool, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over the joint batch and time axes of ``x[b, f, D]``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 3:
        raise ShapeError(f"batch_norm_bt expects [b, f, D], got {x.shape}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"batch_norm_bt: affine params {gamma.shape}/{beta.shape} do not match {d} channels")
    red = (0, 1)
    if train:
        n = x.shape[0] * x.shape[1]
        if n < 2:
            raise ShapeError("batch_norm_bt in train mode needs at least two batch*time samples")
        mu = x.data.mean(axis=red)
        xc = x.data - mu
        var = (xc * xc).mean(axis=red)
        state.update(mu, var * n / (n - 1))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv

        def bw(g):
            gx = None
            if x.requires_grad:
                gh = g * gamma.data
                gx = inv * (gh - gh.mean(axis=red) - xhat * (gh * xhat).mean(axis=red))
            return gx, (g * xhat).sum(axis=red), g.sum(axis=red)
    else:
        if not state.initialized:
            raise RuntimeError("batch_norm_bt: uninitialized running stats; run a train-mode pass first")
        inv = 1.0 / np.sqrt(state.var + eps)
        xhat = (x.data - state.mean) * inv

        def bw(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "batch_norm_bt")


# --------------------------------------------------------------- convolution

def _conv_pads(t: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    if padding == "same":
        t_out = -(-t // stride)
        total = max((t_out - 1) * stride + k - t, 0)
        left = total // 2
        return left, total - left, t_out
    if padding == "valid":
        return 0, 0, (t - k) // stride + 1 if t >= k else 0
    raise ValueError(f"unknown padding mode {padding!r}")


def conv1d(x, kernels, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of ``x[b, c_in, t]`` with ``kernels[c_out, c_in, k]``."""
    x, w = as_tensor(x), as_tensor(kernels)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x[b, c_in, t] and kernels[c_out, c_in, k], got {x.shape} and {w.shape}")
    if stride < 1:
        raise ValueError("conv1d stride must be >= 1")
    b, c_in, t = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d: input has {c_in} channels but kernels expect {c_in_w} ({x.shape} vs {w.shape})")
    left, right, t_out = _conv_pads(t, k, stride, padding)
    if t + left + right < k or t_out < 1:
        raise ShapeError(f"conv1d: kernel width {k} exceeds padded input length {t + left + right}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    starts = np.arange(t_out) * stride
    cols = xp[:, :, starts[:, None] + np.arange(k)]  # b, c_in, t_out, k
    out = np.einsum("bctk,ock->bot", cols, w.data, optimize=True)

    def bw(g):
        gw = np.einsum("bot,bctk->ock", g, cols, optimize=True) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.einsum("bot,ock->bctk", g, w.data, optimize=True)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, starts + j] += gcols[:, :, :, j]
            gx = gxp[:, :, left:left + t]
        return gx, gw

    return make(out, (x, w), bw, "conv1d")


# ------------------------------------------------------------ temporal ops

def cumsum_time(x, axis: int = 1, exclusive: bool = True) -> Tensor:
    """Running sum along ``axis``; ``exclusive`` starts from zero at frame 0."""
    x = as_tensor(x)
    c = np.cumsum(x.data, axis=axis)
    if exclusive:
        out = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), np.take(c, range(c.shape[axis] - 1), axis=axis)], axis=axis)
    else:
        out = c

    def bw(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        if exclusive:
            # d out[k] / d x[m] = 1 for m < k
            rev = rev - g
        return (rev,)

    return make(out, (x,), bw, "cumsum_time")


def central_diff(x: np.ndarray, dt: float, axis: int = 1) -> np.ndarray:
    """Central differences inside, second-order one-sided at both ends."""
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, 0)
    n = x.shape[0]
    if n < 3:
        raise ShapeError(f"time differencing needs at least 3 frames, got {n}")
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2 * dt)
    d[0] = (-3 * x[0] + 4 * x[1] - x[2]) / (2 * dt)
    d[-1] = (3 * x[-1] - 4 * x[-2] + x[-3]) / (2 * dt)
    return np.moveaxis(d, 0, axis)


def _central_diff_adjoint(g: np.ndarray, dt: float, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    h = g / (2 * dt)
    gx = np.zeros_like(g)
    gx[2:] += h[1:-1]
    gx[:-2] -= h[1:-1]
    gx[0] += -3 * h[0]
    gx[1] += 4 * h[0]
    gx[2] -= h[0]
    gx[-1] += 3 * h[-1]
    gx[-2] -= 4 * h[-1]
    gx[-3] += h[-1]
    return np.moveaxis(gx, 0, axis)


def diff_time(x, dt: float = 1.0, axis: int = 1) -> Tensor:
    """Differentiable finite-difference derivative along ``axis``."""
    x = as_tensor(x)
    out = central_diff(x.data, dt, axis)
    return make(out, (x,), lambda g: (_central_diff_adjoint(g, dt, axis),), "diff_time")
