"""Evaluation (metric suite on a split) and downstream performance analysis
with trajectory plots.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import analysis
from ..lossmetrics import evaluate as metric_report
from ..lossmetrics import pose_tempogram
from ..model import kalman_fuse, load_checkpoint
from ..violinsim import JOINT_NAMES, hold_angles
from .config import ConfigError, RunConfig
from .data import SplitData, check_compatible, load_split, read_clip, read_index, stitch

EVAL_CHUNK = 16
ORACLE = "oracle"


def load_run(checkpoint) -> tuple:
    model, _, extra = load_checkpoint(checkpoint)
    if "run_config" not in extra:
        raise ConfigError(f"{checkpoint}: checkpoint carries no run config")
    return model, RunConfig.from_dict(extra["run_config"]), extra


def predict(model, cfg: RunConfig, split: SplitData, kalman: bool) -> np.ndarray:
    """Eval-mode pose estimates [n, f, J, 3], Kalman-fused when asked."""
    t = cfg.train
    out = []
    for i in range(0, len(split), EVAL_CHUNK):
        sl = slice(i, i + EVAL_CHUNK)
        d = model(split.kp[sl], split.features[sl], train=False).dynamics
        out.append(kalman_fuse(d.pose, d.vel, d.acc, 1.0, t.kalman_sigma_q, t.kalman_r) if kalman else d.pose.data)
    return np.concatenate(out)


def _check_dataset(cfg: RunConfig, data_dir) -> None:
    check_compatible(cfg, read_index(data_dir))


def run_eval(checkpoint, data_dir, split: str = "test", kalman: bool | None = None, out_dir=None) -> dict:
    """Aggregate and per-sample metrics; writes metrics.json and per_joint.csv when ``out_dir`` is given."""
    model, cfg, extra = load_run(checkpoint)
    _check_dataset(cfg, data_dir)
    use_kalman = cfg.train.kalman if kalman is None else kalman
    data = load_split(data_dir, split, cfg.model.joints, cfg.model.feature_rate)
    pred = predict(model, cfg, data, use_kalman)
    report = metric_report(pred, data.pose, data.joints)
    per_sample = []
    for k in range(len(data)):
        r = metric_report(pred[k], data.pose[k], data.joints).to_dict()
        per_sample.append({"name": data.names[k], "clip_id": data.clip_ids[k], "start_frame": int(data.start_frames[k]),
                           **{m: r[m] for m in ("mpjpe", "p_mpjpe", "mpjve", "mpjae", "dtw")}})
    result = {"split": split, "kalman": use_kalman, "epoch": extra.get("epoch"), "aggregate": report.to_dict(),
              "per_sample": per_sample}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
        report.write_per_joint_csv(out / "per_joint.csv")
    return result


# ------------------------------------------------------------------ analysis

def clip_poses(data_dir, split: SplitData, windows: np.ndarray) -> tuple[dict, dict, dict]:
    """Stitch window predictions and ground truth into whole clips; returns (pred, gt, clip json)."""
    clips = {c: read_clip(data_dir, c) for c in dict.fromkeys(split.clip_ids)}
    frames = {c: clips[c]["frames"] for c in clips}
    pred = stitch(windows, split.clip_ids, split.start_frames, frames)
    gt = stitch(split.pose, split.clip_ids, split.start_frames, frames)
    return pred, gt, clips


def analyze_poses(pred: dict, gt: dict, clips: dict, joints, fps: float) -> tuple[analysis.TaskScores, dict]:
    total = analysis.TaskCounts()
    per_clip = {}
    for c in sorted(pred):
        counts = analysis.analyze_clip(pred[c], gt[c], joints, fps, clips[c]["events"])
        per_clip[c] = counts.scores().to_dict()
        total = total + counts
    return total.scores(), per_clip


def run_analyze(checkpoints: dict, data_dir, split: str = "test", out_dir=None, kalman: bool | None = None,
                plots: bool = True, log=None) -> dict:
    """Task scores for each named checkpoint (``"oracle"`` maps to ground-truth poses)."""
    results, table_rows = {}, {}
    out = Path(out_dir) if out_dir is not None else None
    for name, ckpt in checkpoints.items():
        if ckpt == ORACLE:
            index = read_index(data_dir)
            joints = JOINT_NAMES
            data = load_split(data_dir, split, joints, index["config"]["model"]["feature_rate"])
            windows = data.pose
        else:
            model, cfg, _ = load_run(ckpt)
            _check_dataset(cfg, data_dir)
            data = load_split(data_dir, split, cfg.model.joints, cfg.model.feature_rate)
            windows = predict(model, cfg, data, cfg.train.kalman if kalman is None else kalman)
        pred, gt, clips = clip_poses(data_dir, data, windows)
        scores, per_clip = analyze_poses(pred, gt, clips, data.joints, data.fps)
        results[name] = {"scores": scores.to_dict(), "per_clip": per_clip}
        table_rows[name] = scores
        if log:
            log(f"{name}: " + ", ".join(f"{t} {'-' if getattr(scores, k) is None else f'{getattr(scores, k):.2f}'}"
                                        for k, t in analysis.TABLE_COLUMNS))
        if out is not None and plots:
            for c in sorted(pred):
                plot_clip(out / "plots" / name, c, pred[c], gt[c], data.joints, data.fps, clips[c]["events"])
    table = analysis.format_table(table_rows)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.json").write_text(json.dumps(results, indent=1, sort_keys=True) + "\n")
        (out / "table.txt").write_text(table + "\n")
    return {"results": results, "table": table}


# --------------------------------------------------------------------- plots

PLOT_TASKS = ("bow", "straight", "hold", "vibrato", "tempo")


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "viopose"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def plot_clip(directory, clip_id: str, pred, gt, joints, fps: float, events: dict) -> list[Path]:
    """One SVG per task; predictions in red, ground truth in black."""
    plt = _figure()
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    idx = {n: i for i, n in enumerate(joints)}
    t = np.arange(len(gt)) / fps
    written = []

    def save(fig, task):
        p = d / f"{clip_id}_{task}.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(p)

    if "R_wrist" in idx:
        rp, rg = pred[:, idx["R_wrist"]], gt[:, idx["R_wrist"]]
        axis = analysis.principal_axis(analysis.lowpass(rg, fps, analysis.BOW_CUTOFF_HZ))
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(t, (rg - rg.mean(0)) @ axis, "k-", lw=1, label="ground truth")
        ax.plot(t, (rp - rg.mean(0)) @ axis, "r-", lw=1, label="predicted")
        for e in events.get("bow_changes", []):
            ax.axvline(e, color="0.7", lw=0.5)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("right wrist along bow (mm)")
        ax.legend(loc="upper right")
        save(fig, "bow")

        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(rg[:, 0], rg[:, 2], "k-", lw=1, label="ground truth")
        ax.plot(rp[:, 0], rp[:, 2], "r-", lw=1, label="predicted")
        ax.set_xlabel("x (mm)")
        ax.set_ylabel("z (mm)")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="upper right")
        save(fig, "straight")

        if len(gt) >= 3:
            fig, ax = plt.subplots(figsize=(8, 3))
            win = min(2.0, len(gt) / fps)
            tp = pose_tempogram(pred[None], fps, win, idx["R_wrist"])
            tg = pose_tempogram(gt[None], fps, win, idx["R_wrist"])
            ax.plot(tg.bpm, tg.values.data[0].mean(0), "k-", lw=1, label="ground truth")
            ax.plot(tp.bpm, tp.values.data[0].mean(0), "r-", lw=1, label="predicted")
            ax.set_xlabel("tempo (BPM)")
            ax.set_ylabel("autocorrelation")
            ax.legend(loc="upper right")
            save(fig, "tempo")

    if all(j in idx for j in ("L_elbow", "L_wrist", "L_hand")):
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(t, hold_angles(*(gt[:, idx[j]] for j in ("L_elbow", "L_wrist", "L_hand"))), "k-", lw=1,
                label="ground truth")
        ax.plot(t, hold_angles(*(pred[:, idx[j]] for j in ("L_elbow", "L_wrist", "L_hand"))), "r-", lw=1,
                label="predicted")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("left wrist angle (deg)")
        ax.legend(loc="upper right")
        save(fig, "hold")

    if all(j in idx for j in ("L_wrist", "L_hand")) and fps >= 2 * analysis.VIBRATO_BAND_HZ[1]:
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(t, analysis.vibrato_signal(gt[:, idx["L_wrist"]], gt[:, idx["L_hand"]], fps), "k-", lw=1,
                label="ground truth")
        ax.plot(t, analysis.vibrato_signal(pred[:, idx["L_wrist"]], pred[:, idx["L_hand"]], fps), "r-", lw=1,
                label="predicted")
        for a, b in events.get("vibrato_segments", []):
            ax.axvspan(a, b, color="0.9")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("left hand, 4-9 Hz band (mm)")
        ax.legend(loc="upper right")
        save(fig, "vibrato")
    return written
