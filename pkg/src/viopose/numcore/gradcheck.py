"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Coordinate-wise ``|a - n| / max(|a| + |n|, floor)``."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def roundoff_floor(f0: float, h: float = 1e-5) -> float:
    # central differences cannot resolve gradients below ~eps*|f|/h
    return max(1e-8, 1e3 * np.finfo(float).eps * max(1.0, abs(f0)) / h)


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, coords=None, h: float | None = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``x`` (mutated and restored)."""
    flat = x.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size)
    for i in coords:
        orig = flat[i]
        step = h if h is not None else 1e-5 * (1.0 + abs(orig))
        flat[i] = orig + step
        fp = float(fn().data)
        flat[i] = orig - step
        fm = float(fn().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(x.shape)


def tape_grads(fn: Callable[[], Tensor], inputs: list[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]


def grad_check(fn: Callable[..., Tensor], point, h: float | None = None, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape and central-difference gradients.

    ``fn`` is called with the tensor(s) in ``point``.  ``point`` may be a
    single array/Tensor or a list of them.  With ``max_coords`` each tensor is
    probed at that many randomly chosen coordinates instead of all of them.
    """
    pts = point if isinstance(point, (list, tuple)) else [point]
    tensors = [p if isinstance(p, Tensor) else Tensor(np.array(p, dtype=np.float64)) for p in pts]

    def call():
        return fn(*tensors)

    analytic = tape_grads(call, tensors)
    floor = roundoff_floor(float(call().data), h or 1e-5)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = rng.choice(t.size, size=max_coords, replace=False)
        n = numeric_grad(call, t, coords, h)
        a_flat = a.reshape(-1)
        n_flat = n.reshape(-1)
        idx = np.arange(t.size) if coords is None else np.asarray(coords)
        if idx.size:
            worst = max(worst, float(relative_error(a_flat[idx], n_flat[idx], floor).max()))
    return worst


def check_parameters(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], per_tensor: int = 4,
                     rng: np.random.Generator | None = None, h: float | None = None) -> dict[str, float]:
    """Relative error per named parameter, probing ``per_tensor`` coordinates each."""
    rng = rng or np.random.default_rng(0)
    plist = list(params.values())
    analytic = tape_grads(loss_fn, plist)
    floor = roundoff_floor(float(loss_fn().data), h or 1e-5)
    report = {}
    for (name, p), a in zip(params.items(), analytic):
        k = min(per_tensor, p.size)
        coords = rng.choice(p.size, size=k, replace=False)
        n = numeric_grad(loss_fn, p, coords, h).reshape(-1)[coords]
        report[name] = float(relative_error(a.reshape(-1)[coords], n, floor).max())
    return report
