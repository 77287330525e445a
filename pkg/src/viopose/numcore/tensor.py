"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record onto a :class:`Tape` while one is active (``with
Tape() as tape:``).  Outside a tape every op is a plain numpy computation,
which is what inference and evaluation use.
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of the tape (reuse, non-scalar loss, missing tape)."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Each entry is ``(op, parents, out, backward)`` where ``backward`` maps the
    output gradient to a tuple of parent gradients.  A tape can be replayed
    backward exactly once.
    """

    def __init__(self):
        self.entries: list[tuple] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape already consumed; start a new Tape for a new forward pass")
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self):
        return len(self.entries)

    def record(self, op: str, parents: tuple, out: "Tensor", backward) -> None:
        if self.consumed:
            raise TapeError("tape already consumed; start a new Tape for a new forward pass")
        self.entries.append((op, parents, out, backward))

    def ops(self) -> list[str]:
        return [e[0] for e in self.entries]

    def backward(self, loss: "Tensor") -> None:
        if self.consumed:
            raise TapeError("backward called twice on the same tape; run a new forward pass first")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for op, parents, out, bw in reversed(self.entries):
            g = grads.pop(id(out), None)
            for p in parents:
                if p.requires_grad and p._tape is None:
                    leaves.setdefault(id(p), p)
            if g is None:
                continue
            pgs = bw(g)
            for p, pg in zip(parents, pgs):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.data.shape:
                    raise ShapeError(f"{op}: gradient shape {pg.shape} does not match input {p.data.shape}")
                k = id(p)
                prev = grads.get(k)
                grads[k] = pg if prev is None else prev + pg
        for k, leaf in leaves.items():
            g = grads.get(k)
            leaf.grad = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64, copy=True)
        if loss._tape is None and loss.requires_grad:
            # loss is itself a leaf
            loss.grad = np.ones_like(loss.data)
        self.consumed = True
        self.entries.clear()


class Tensor:
    """A float64 array that may participate in the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, idx):
        from . import ops
        return ops.index(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def relu(self):
        from . import ops
        return ops.relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    """Wrap ``data`` as an op output, recording it when any parent needs grad."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape.record(op, parents, out, backward)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf that fed ``loss``."""
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise TapeError("loss was not produced on an active tape; wrap the forward pass in `with Tape():`")
    loss._tape.backward(loss)
