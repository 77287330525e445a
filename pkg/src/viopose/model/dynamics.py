"""Integration/differentiation over time, bidirectional mixing and Kalman fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..numcore import ops
from ..numcore.tensor import Tensor, as_tensor

MIXING_MODES = ("full", "no_int", "no_diff", "none")


@dataclass
class DynamicsTriple:
    """Final pose/velocity/acceleration estimates plus the initial head outputs.

    Arrays are [batch, f, J, 3]; units are mm, mm/frame and mm/frame^2.
    """

    pose: Tensor
    vel: Tensor
    acc: Tensor
    pose_init: Tensor
    vel_init: Tensor
    acc_init: Tensor
    vel_int: Tensor | None = None  # velocity after the integration-side average

    def numpy(self) -> dict:
        return {k: getattr(self, k).data for k in ("pose", "vel", "acc", "pose_init", "vel_init", "acc_init")}


def integrate_time(x, dt: float, anchor) -> Tensor:
    """Exclusive rectangle-rule running sum, offset so frame 0 equals ``anchor[:, 0]``."""
    x, anchor = as_tensor(x), as_tensor(anchor)
    if dt <= 0:
        raise ValueError("dt must be positive")
    return ops.add(ops.mul(ops.cumsum_time(x, axis=1, exclusive=True), dt), ops.index(anchor, (slice(None), slice(0, 1))))


def differentiate_time(x, dt: float) -> Tensor:
    return ops.diff_time(x, dt, axis=1)


def bidirectional_mix(pose_init, vel_init, acc_init, dt: float = 1.0, mode: str = "full") -> DynamicsTriple:
    """Average head estimates with integrated (top-down) and differentiated (bottom-up) ones.

    mode "no_int" drops the integration pair, "no_diff" the differentiation
    pair and "none" returns the head outputs unchanged.
    """
    if mode not in MIXING_MODES:
        raise ValueError(f"unknown mixing mode {mode!r}")
    p, v, a = as_tensor(pose_init), as_tensor(vel_init), as_tensor(acc_init)
    if not p.shape == v.shape == a.shape:
        raise ValueError(f"mixing needs equal shapes, got {p.shape}, {v.shape}, {a.shape}")
    if mode in ("full", "no_diff"):
        v_a = ops.mul(ops.add(v, integrate_time(a, dt, v)), 0.5)
        p_hat = ops.mul(ops.add(p, integrate_time(v_a, dt, p)), 0.5)
    else:
        v_a, p_hat = v, p
    if mode in ("full", "no_int"):
        v_hat = ops.mul(ops.add(v_a, differentiate_time(p_hat, dt)), 0.5)
        a_hat = ops.mul(ops.add(a, differentiate_time(v_hat, dt)), 0.5)
    else:
        v_hat, a_hat = v_a, a
    return DynamicsTriple(p_hat, v_hat, a_hat, p, v, a, v_a)


def ca_model(dt: float = 1.0, sigma_q: float = 1.0):
    """Constant-acceleration transition and process noise (white jerk on acceleration)."""
    F = np.array([[1.0, dt, dt * dt / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    G = np.array([dt * dt / 2, dt, 1.0])
    return F, sigma_q**2 * np.outer(G, G)


def kalman_fuse(pose, vel, acc, dt: float = 1.0, sigma_q: float = 1.0, r_diag=(25.0, 4.0, 4.0)) -> np.ndarray:
    """Forward Kalman filter per joint and axis measuring [p, v, a] each frame; returns positions.

    Inputs are arrays (or Tensors) shaped [..., f, J, 3] with time on axis -3.
    """
    p, v, a = (np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in (pose, vel, acc))
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
        raise ValueError("kalman_fuse: non-finite input")
    shape = p.shape
    # -> [series, f, 3 (p, v, a)]
    z = np.stack([np.moveaxis(x, -3, -1).reshape(-1, shape[-3]) for x in (p, v, a)], axis=-1)
    F, Q = ca_model(dt, sigma_q)
    out = kernels.kalman_ca(np.ascontiguousarray(z), F, Q, np.diag(np.asarray(r_diag, dtype=np.float64)))
    pos = out[..., 0].reshape(shape[:-3] + (shape[-2], shape[-1], shape[-3]))
    return np.moveaxis(pos, -1, -3)
