"""Central-difference check of the full forward pass plus training loss."""

from __future__ import annotations

import time

import numpy as np

from ..lossmetrics import audio_tempogram, gt_dynamics
from ..model import VioPoseModel
from ..numcore import check_parameters
from ..numcore.gradcheck import numeric_grad, roundoff_floor, tape_grads
from .config import RunConfig
from .train import compute_loss


def model_gradcheck(cfg: RunConfig, variant: str, coords: int = 3, batch: int = 2) -> dict:
    """Max relative gradient error over every parameter tensor (``coords`` random entries each).

    Hierarchy ``*.ffn.fc2.b`` biases feed only a train-mode batch norm, which
    removes any per-channel constant, so their gradient is exactly zero. They
    are checked for that instead of a relative error.
    """
    cfg = RunConfig.from_dict(cfg.to_dict())
    cfg.loss.variant = variant
    cfg.validate()
    c = cfg.model
    rng = np.random.default_rng(cfg.seed)
    kp = rng.uniform(300, 900, (batch, c.frames, c.n_joints, 2))
    fe = rng.normal(size=(batch, c.audio_frames, 35))
    t = np.arange(c.frames)[None, :, None, None]
    p, v, acc = gt_dynamics(50 * np.sin(2 * np.pi * t / c.frames + rng.uniform(0, 6, (batch, 1, c.n_joints, 3))))
    tempo = None
    if variant == "appendix":
        env = np.abs(rng.normal(size=(batch, c.audio_frames)))
        tempo = np.stack([audio_tempogram(e, c.feature_rate, c.fps, c.frames, cfg.loss.tempo_window_s,
                                          cfg.loss.tempo_hop_s) for e in env])
    b = {"kp": kp, "features": fe, "pose": p, "vel": v, "acc": acc, "tempo": tempo}
    model = VioPoseModel(c, seed=cfg.seed)

    def loss():
        return compute_loss(model, cfg, b, train=True)[1].total

    t0 = time.time()
    null = sorted(n for n in model.params if n.startswith("hier.") and n.endswith(".ffn.fc2.b"))
    live = {n: q for n, q in model.params.items() if n not in null}
    errs = check_parameters(loss, live, per_tensor=coords, rng=np.random.default_rng(cfg.seed))
    worst = max(errs, key=errs.get)
    f0 = abs(float(loss().data))
    null_ok = True
    for n, g in zip(null, tape_grads(loss, [model.params[n] for n in null])):
        num = numeric_grad(loss, model.params[n], coords=[0]).reshape(-1)[0]
        null_ok &= bool(np.abs(g).max() <= 1e-12 * f0 and abs(num) < roundoff_floor(f0))
    return {"variant": variant, "max_rel_err": errs[worst], "worst_param": worst, "n_params_checked": len(errs),
            "n_zero_grad": len(null), "zero_grad_ok": null_ok, "seconds": round(time.time() - t0, 1)}
