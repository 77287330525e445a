"""Training loop: shuffled mini-batches built from gradient-accumulated
micro-batches, Adam with a step learning-rate schedule, per-epoch JSON-lines
log, last/best checkpoints, resume and divergence abort.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..lossmetrics import evaluate, total_loss_appendix, total_loss_main
from ..model import VioPoseModel, load_checkpoint, save_checkpoint
from ..numcore import AdamState, NonFiniteGradient, Tape, adam_step
from .config import RunConfig
from .data import SplitData, check_compatible, load_split, read_index

LOG = "log.jsonl"
EVAL_CHUNK = 16


class TrainingDiverged(RuntimeError):
    pass


class Batches:
    """Split arrays plus the per-sample targets the loss needs."""

    def __init__(self, split: SplitData, cfg: RunConfig):
        self.split = split
        self.tempo = None
        if cfg.loss.variant == "appendix":
            self.tempo = split.tempograms(cfg.loss.tempo_window_s, cfg.loss.tempo_hop_s)

    def __len__(self):
        return len(self.split)

    def take(self, idx) -> dict:
        s = self.split
        return {"kp": s.kp[idx], "features": s.features[idx], "pose": s.pose[idx], "vel": s.vel[idx],
                "acc": s.acc[idx], "tempo": None if self.tempo is None else self.tempo[idx]}


def fit_audio_norm(model: VioPoseModel, features: np.ndarray) -> None:
    flat = features.reshape(-1, features.shape[-1])
    std = flat.std(axis=0)
    model.buffers["audio_mean"] = flat.mean(axis=0)
    model.buffers["audio_std"] = np.where(std > 1e-8, std, 1.0)


def compute_loss(model: VioPoseModel, cfg: RunConfig, b: dict, train: bool):
    out = model(b["kp"], b["features"], train=train)
    gt = (b["pose"], b["vel"], b["acc"])
    if cfg.loss.variant == "main":
        return out, total_loss_main(out.dynamics, gt, cfg.loss)
    j = cfg.model.joints.index("R_wrist")
    return out, total_loss_appendix(out.dynamics, gt, out.audio_pose, b["tempo"], cfg.loss, cfg.model.fps, j)


def _bn_snapshot(model):
    return {n: (st.mean.copy(), st.var.copy(), st.initialized) for n, st in model.store.bn.items()}


def _bn_restore(model, snap):
    for n, (m, v, init) in snap.items():
        st = model.store.bn[n]
        st.mean, st.var, st.initialized = m.copy(), v.copy(), init


def calibrate_bn(model: VioPoseModel, data: Batches, micro: int) -> None:
    """Fill running statistics with train-mode passes (no parameter change)."""
    for i in range(0, len(data), micro):
        b = data.take(np.arange(i, min(i + micro, len(data))))
        model(b["kp"], b["features"], train=True)


def eval_loss(model: VioPoseModel, cfg: RunConfig, data: Batches) -> tuple[float, dict, np.ndarray]:
    """Sample-weighted mean loss and breakdown in eval mode, plus the raw pose estimates."""
    total, parts, poses = 0.0, {}, []
    for i in range(0, len(data), EVAL_CHUNK):
        idx = np.arange(i, min(i + EVAL_CHUNK, len(data)))
        out, res = compute_loss(model, cfg, data.take(idx), train=False)
        w = len(idx) / len(data)
        total += w * float(res.total.data)
        for k, v in res.breakdown().items():
            parts[k] = v if k.startswith("w_") else parts.get(k, 0.0) + w * v
        poses.append(out.dynamics.pose.data)
    return total, parts, np.concatenate(poses)


def train_epoch(model: VioPoseModel, adam: AdamState, cfg: RunConfig, data: Batches, epoch: int) -> tuple[float, dict]:
    t = cfg.train
    adam.lr = t.lr_at(epoch)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
    params = model.params
    total, parts = 0.0, {}
    for s in range(0, len(order), t.batch):
        batch = order[s:s + t.batch]
        grads = {n: np.zeros_like(p.data) for n, p in params.items()}
        for m in range(0, len(batch), t.micro_batch):
            idx = batch[m:m + t.micro_batch]
            w = len(idx) / len(batch)
            for p in params.values():
                p.grad = None
            with Tape() as tape:
                _, res = compute_loss(model, cfg, data.take(idx), train=True)
            loss = float(res.total.data)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            tape.backward(res.total)
            for n, p in params.items():
                if p.grad is not None:
                    grads[n] += w * p.grad
            share = len(idx) / len(data)
            total += share * loss
            for k, v in res.breakdown().items():
                parts[k] = v if k.startswith("w_") else parts.get(k, 0.0) + share * v
        try:
            adam_step(params, adam, grads)
        except NonFiniteGradient as e:
            raise TrainingDiverged(f"epoch {epoch}: {e}") from None
    return total, parts


def _metrics(pred, split: SplitData) -> dict:
    d = evaluate(pred, split.pose, split.joints).to_dict()
    d.pop("per_joint")
    return d


def config_diff(a: dict, b: dict, prefix: str = "") -> list[str]:
    """Dotted keys whose values differ between two nested config dicts."""
    out = []
    for k in sorted(set(a) | set(b)):
        x, y = a.get(k), b.get(k)
        if isinstance(x, dict) and isinstance(y, dict):
            out += config_diff(x, y, f"{prefix}{k}.")
        elif x != y:
            out.append(f"{prefix}{k}")
    return out


def _read_log(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _write_log(path: Path, rows: list[dict]) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def train(cfg: RunConfig, data_dir, out_dir, resume: bool = False, log=None) -> list[dict]:
    """Train for ``cfg.train.epochs`` epochs; returns the log rows."""
    out = Path(out_dir)
    check_compatible(cfg, read_index(data_dir))
    tr = Batches(load_split(data_dir, "train", cfg.model.joints, cfg.model.feature_rate), cfg)
    va = Batches(load_split(data_dir, "val", cfg.model.joints, cfg.model.feature_rate), cfg)
    rows = []
    if resume:
        model, adam, extra = load_checkpoint(out / "last")
        diff = config_diff(extra.get("run_config", {}), cfg.to_dict())
        diff = [k for k in diff if k != "train.epochs"]  # extending a run is allowed
        if diff:
            raise ValueError(f"resume: config differs from the checkpoint in {diff}")
        start, best = extra["epoch"] + 1, extra["best_val_loss"]
        rows = [r for r in _read_log(out / LOG) if r["epoch"] < start]
    else:
        if (out / LOG).exists():
            raise FileExistsError(f"{out}: already holds a training run (use --resume or a new directory)")
        out.mkdir(parents=True, exist_ok=True)
        model = VioPoseModel(cfg.model, seed=cfg.seed)
        fit_audio_norm(model, tr.split.features)
        adam = AdamState(lr=cfg.train.lr)
        snap = _bn_snapshot(model)
        calibrate_bn(model, tr, cfg.train.micro_batch)
        base_loss, base_parts, base_pred = eval_loss(model, cfg, va)
        _bn_restore(model, snap)
        baseline = {"val_loss": base_loss, "val_breakdown": base_parts, "val_metrics": _metrics(base_pred, va.split)}
        (out / "baseline.json").write_text(json.dumps(baseline, indent=1, sort_keys=True) + "\n")
        (out / "config.json").write_text(cfg.to_json() + "\n")
        start, best = 1, math.inf
    for epoch in range(start, cfg.train.epochs + 1):
        tl, tparts = train_epoch(model, adam, cfg, tr, epoch)
        vl, vparts, vpred = eval_loss(model, cfg, va)
        if not math.isfinite(vl):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        improved = vl < best
        best = min(best, vl)
        row = {"epoch": epoch, "lr": adam.lr, "train_loss": tl, "train_breakdown": tparts, "val_loss": vl,
               "val_breakdown": vparts, "val_metrics": _metrics(vpred, va.split), "best": improved}
        extra = {"epoch": epoch, "best_val_loss": best, "run_config": cfg.to_dict()}
        if improved:
            save_checkpoint(out / "best", model, None, extra)
        save_checkpoint(out / "last", model, adam, extra)
        rows.append(row)
        _write_log(out / LOG, rows)
        if log:
            log(f"epoch {epoch}/{cfg.train.epochs} lr {adam.lr:g} train {tl:.4f} val {vl:.4f} "
                f"val mpjpe {row['val_metrics']['mpjpe']:.2f} mm")
    return rows
