"""Parameterised building blocks on top of numcore."""

from __future__ import annotations

import math

import numpy as np

from ..numcore import ops
from ..numcore.ops import BatchNormState
from ..numcore.tensor import Tensor


class ParamStore:
    """Ordered name -> Tensor table shared by all layers of a model."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def glorot(self, name: str, fan_in: int, fan_out: int, shape=None) -> Tensor:
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-lim, lim, size=shape or (fan_in, fan_out)))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def normal(self, name: str, shape, std: float = 0.02) -> Tensor:
        return self.add(name, self.rng.normal(scale=std, size=shape))

    def batch_norm_state(self, name: str, dim: int) -> BatchNormState:
        st = BatchNormState(dim)
        self.bn[name] = st
        return st

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.W = store.glorot(f"{name}.W", d_in, d_out)
        self.b = store.zeros(f"{name}.b", (d_out,)) if bias else None

    def __call__(self, x):
        y = ops.matmul(x, self.W)
        return y if self.b is None else ops.add(y, self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.gamma = store.ones(f"{name}.gamma", (d,))
        self.beta = store.zeros(f"{name}.beta", (d,))

    def __call__(self, x):
        return ops.layer_norm(x, self.gamma, self.beta)


class BatchNorm:
    """Batch norm over batch x time with running statistics."""

    def __init__(self, store: ParamStore, name: str, d: int):
        self.gamma = store.ones(f"{name}.gamma", (d,))
        self.beta = store.zeros(f"{name}.beta", (d,))
        self.state = store.batch_norm_state(name, d)

    def __call__(self, x, train: bool):
        return ops.batch_norm_bt(x, self.gamma, self.beta, self.state, train)


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, d: int, heads: int):
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.h, self.dh = heads, d // heads
        self.q = Linear(store, f"{name}.q", d, d)
        # a key bias shifts every score of a query equally, which softmax ignores
        self.k = Linear(store, f"{name}.k", d, d, bias=False)
        self.v = Linear(store, f"{name}.v", d, d)
        self.o = Linear(store, f"{name}.o", d, d)

    def _split(self, x):
        b, f, _ = x.shape
        return ops.transpose(ops.reshape(x, (b, f, self.h, self.dh)), (0, 2, 1, 3))

    def __call__(self, x, context=None):
        context = x if context is None else context
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.dh))
        att = ops.softmax(scores, axis=-1)
        out = ops.transpose(ops.matmul(att, v), (0, 2, 1, 3))
        b, f = x.shape[0], x.shape[1]
        return self.o(ops.reshape(out, (b, f, self.h * self.dh)))


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d: int, d_ff: int):
        self.fc1 = Linear(store, f"{name}.fc1", d, d_ff)
        self.fc2 = Linear(store, f"{name}.fc2", d_ff, d)

    def __call__(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


class TransformerBlock:
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)).

    With ``cross=True`` the attention takes keys/values from a second sequence.
    """

    def __init__(self, store: ParamStore, name: str, d: int, heads: int, d_ff: int, cross: bool = False):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.ln_ctx = LayerNorm(store, f"{name}.ln_ctx", d) if cross else None
        self.att = MultiHeadAttention(store, f"{name}.att", d, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.ffn = FeedForward(store, f"{name}.ffn", d, d_ff)

    def __call__(self, x, context=None):
        if self.ln_ctx is not None:
            if context is None:
                raise ValueError("cross-attention block needs a context sequence")
            x = ops.add(x, self.att(self.ln1(x), self.ln_ctx(context)))
        else:
            x = ops.add(x, self.att(self.ln1(x)))
        return ops.add(x, self.ffn(self.ln2(x)))

    def zero_residuals(self) -> None:
        """Make the block an exact identity map (used in construction checks)."""
        for lin in (self.att.o, self.ffn.fc2):
            lin.W.data[...] = 0.0
            lin.b.data[...] = 0.0


class Conv1d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, k: int):
        self.w = store.glorot(f"{name}.w", c_in * k, c_out * k, shape=(c_out, c_in, k))
        self.b = store.zeros(f"{name}.b", (c_out, 1))

    def __call__(self, x):
        return ops.add(ops.conv1d(x, self.w, 1, "same"), self.b)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_in, n_out] linear-interpolation matrix mapping a length-n_in series onto n_out samples.

    Endpoints are aligned (sample j sits at input position j*(n_in-1)/(n_out-1)).
    """
    if n_out < 1 or n_in < 1:
        raise ValueError("interpolation lengths must be positive")
    pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    w = pos - lo
    M = np.zeros((n_in, n_out))
    M[lo, np.arange(n_out)] += 1.0 - w
    M[hi, np.arange(n_out)] += w
    return M
