"""Synthetic dataset on disk: whole clips rendered by the simulator, cut into
overlapping windows, split by participant.

Layout::

    dataset.json              config, split table, sample index
    clips/<clip_id>.json      script and full-clip ground-truth events
    samples/<00000>/          one window (pose3d.bin, kp2d.bin, audio.wav, meta.json)
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audiofeat import assemble_features
from ..lossmetrics import audio_tempogram, gt_dynamics
from ..violinsim import JOINT_NAMES, events_meta, generate_script, make_sample, read_sample, slice_sample, write_sample
from .config import ConfigError, RunConfig

SPLITS = ("train", "val", "test")
INDEX = "dataset.json"


class DatasetError(ValueError):
    pass


def split_participants(n_participants: int, test_frac: float, val_frac: float, seed: int) -> dict[int, str]:
    """Whole participants go to one split; test gets round(test_frac * P) of them (at least one)."""
    order = np.random.default_rng([seed, 11]).permutation(n_participants)
    n_test = max(1, int(round(test_frac * n_participants))) if test_frac > 0 else 0
    n_val = int(round(val_frac * n_participants)) if n_participants - n_test > 1 else 0
    if val_frac > 0 and n_val == 0 and n_participants - n_test > 1:
        n_val = 1
    out = {}
    for k, p in enumerate(order):
        out[int(p)] = "test" if k < n_test else "val" if k < n_test + n_val else "train"
    return out


def clip_plan(cfg: RunConfig) -> list[dict]:
    d = cfg.data
    split = split_participants(d.participants, d.test_frac, d.val_frac, cfg.seed)
    plan, per_split = [], {}
    for i in range(d.n_clips):
        participant = i % d.participants
        sp = split[participant]
        k = per_split.get(sp, 0)
        per_split[sp] = k + 1
        styles = d.test_styles if (sp == "test" and d.test_styles) else d.styles
        plan.append({"seed": cfg.seed * 10000 + i, "participant": participant, "split": sp,
                     "style": styles[k % len(styles)]})
    return plan


def generate(cfg: RunConfig, out_dir, force: bool = False, log=None) -> dict:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise DatasetError(f"{out}: directory exists and is not empty (use --force to overwrite)")
        if not (out / INDEX).exists():
            raise DatasetError(f"{out}: not a dataset directory; refusing to overwrite it")
        for name in ("samples", "clips"):
            shutil.rmtree(out / name, ignore_errors=True)
        (out / INDEX).unlink()
    out.mkdir(parents=True, exist_ok=True)
    d = cfg.data
    n_win, win = d.windows_per_clip, d.window_frames
    hop = int(round(d.hop_s * d.fps))
    index = []
    for ci, c in enumerate(clip_plan(cfg)):
        script = generate_script(c["seed"], d.clip_s, style=c["style"], fps=d.fps, participant=c["participant"])
        full = make_sample(script, d.sample_rate, d.noise_sigma_px, d.occlusion_rate)
        clip_id = full.meta["clip_id"]
        clip = {"clip_id": clip_id, "split": c["split"], "participant": c["participant"], "style": c["style"],
                "frames": full.pose.n_frames, "fps": d.fps, "script": script.to_dict(), "events": events_meta(script)}
        (out / "clips").mkdir(exist_ok=True)
        (out / "clips" / f"{clip_id}.json").write_text(json.dumps(clip, indent=1, sort_keys=True))
        for w in range(n_win):
            s = slice_sample(full, script, w * hop, win)
            s.meta["split"] = c["split"]
            name = f"{len(index):05d}"
            write_sample(out / "samples" / name, s)
            index.append({"name": name, "clip_id": clip_id, "split": c["split"], "start_frame": w * hop,
                          "participant": c["participant"], "style": c["style"]})
        if log:
            log(f"clip {ci + 1}/{d.n_clips} {clip_id} ({c['split']}, {c['style']})")
    manifest = {"config": cfg.to_dict(), "samples": index,
                "counts": {sp: sum(1 for e in index if e["split"] == sp) for sp in SPLITS}}
    (out / INDEX).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def read_index(data_dir) -> dict:
    p = Path(data_dir) / INDEX
    if not p.exists():
        raise DatasetError(f"{p}: missing (run `viopose generate` first)")
    return json.loads(p.read_text())


@dataclass
class SplitData:
    names: list
    clip_ids: list
    start_frames: np.ndarray
    kp: np.ndarray  # n, f, J, 2
    features: np.ndarray  # n, F, 35
    pose: np.ndarray  # n, f, J, 3
    vel: np.ndarray
    acc: np.ndarray
    envelope: np.ndarray  # n, F (onset envelope column)
    joints: tuple
    fps: float
    feature_rate: float

    def __len__(self):
        return len(self.names)

    def tempograms(self, window_s: float, hop_s: float) -> np.ndarray:
        f = self.pose.shape[1]
        return np.stack([audio_tempogram(e, self.feature_rate, self.fps, f, window_s, hop_s) for e in self.envelope])


def check_compatible(cfg: RunConfig, index: dict) -> None:
    """Raise naming the first field where a run config disagrees with the dataset."""
    dd = index["config"]["data"]
    m = cfg.model
    window = int(round(dd["window_s"] * dd["fps"]))
    for name, ours, theirs in (("fps", m.fps, dd["fps"]), ("frames", m.frames, window),
                               ("audio_frames", m.audio_frames, int(round(dd["window_s"] * m.feature_rate)))):
        if float(ours) != float(theirs):
            raise ConfigError(f"config mismatch: {name} (model {ours}, dataset {theirs})")
    missing = [j for j in m.joints if j not in JOINT_NAMES]
    if missing:
        raise ConfigError(f"config mismatch: joints {missing} not in dataset")


def load_split(data_dir, split: str, joints, feature_rate: int) -> SplitData:
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}; choose from {SPLITS}")
    index = read_index(data_dir)
    entries = [e for e in index["samples"] if e["split"] == split]
    if not entries:
        raise DatasetError(f"split {split!r} of {data_dir} is empty")
    kp, feats, pose, env = [], [], [], []
    fps = None
    for e in entries:
        s = read_sample(Path(data_dir) / "samples" / e["name"])
        sel = [s.pose.joint_names.index(j) for j in joints]
        kp.append(s.kp2d.points[:, sel])
        pose.append(s.pose.positions[:, sel])
        fm = assemble_features(s.audio, feature_rate)
        feats.append(fm.frames)
        env.append(fm.column("envelope"))
        fps = s.pose.fps
    pose = np.stack(pose)
    p, v, a = gt_dynamics(pose)
    return SplitData([e["name"] for e in entries], [e["clip_id"] for e in entries],
                     np.array([e["start_frame"] for e in entries]), np.stack(kp), np.stack(feats), p, v, a,
                     np.stack(env), tuple(joints), float(fps), float(feature_rate))


def read_clip(data_dir, clip_id: str) -> dict:
    p = Path(data_dir) / "clips" / f"{clip_id}.json"
    if not p.exists():
        raise DatasetError(f"{p}: missing")
    return json.loads(p.read_text())


def stitch(values: np.ndarray, clip_ids, start_frames, n_frames: dict) -> dict:
    """Average overlapping windows [n, f, ...] back into whole clips {clip_id: [frames, ...]}."""
    sums, counts = {}, {}
    for v, c, s in zip(values, clip_ids, start_frames):
        if c not in sums:
            sums[c] = np.zeros((n_frames[c],) + v.shape[1:])
            counts[c] = np.zeros(n_frames[c])
        sums[c][s:s + len(v)] += v
        counts[c][s:s + len(v)] += 1
    out = {}
    for c in sums:
        if np.any(counts[c] == 0):
            raise DatasetError(f"clip {c}: windows do not cover every frame")
        out[c] = sums[c] / counts[c].reshape((-1,) + (1,) * (sums[c].ndim - 1))
    return out
