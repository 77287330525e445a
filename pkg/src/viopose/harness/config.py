"""Run configuration: model, loss, dataset and optimizer settings as one JSON document."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..lossmetrics import LossConfig
from ..model import ModelConfig
from ..violinsim import JOINT_NAMES, STYLES

TINY_JOINTS = ("R_wrist", "L_elbow", "L_wrist", "L_hand")
SEED_ENV = "VIOPOSE_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_clips: int = 20
    clip_s: float = 12.0
    window_s: float = 3.0
    hop_s: float = 1.0
    fps: float = 30.0
    participants: int = 10
    test_frac: float = 0.3
    val_frac: float = 0.1
    styles: tuple = STYLES
    test_styles: tuple = ()  # when set, clips of test participants cycle through these instead
    sample_rate: int = 16000
    noise_sigma_px: float = 2.0
    occlusion_rate: float = 0.0

    def __post_init__(self):
        self.styles = tuple(self.styles)
        self.test_styles = tuple(self.test_styles)

    @property
    def window_frames(self) -> int:
        return int(round(self.window_s * self.fps))

    @property
    def windows_per_clip(self) -> int:
        return int((self.clip_s - self.window_s) / self.hop_s + 1e-9) + 1

    @property
    def n_samples(self) -> int:
        return self.n_clips * self.windows_per_clip


@dataclass
class TrainConfig:
    epochs: int = 150
    batch: int = 64
    micro_batch: int = 16  # gradients of micro-batches are summed into one Adam step
    lr: float = 1e-3
    lr_steps: tuple = ((50, 5e-4), (100, 1e-4))  # (first epoch, learning rate)
    kalman: bool = True
    kalman_sigma_q: float = 1.0
    kalman_r: tuple = (25.0, 4.0, 4.0)

    def __post_init__(self):
        self.lr_steps = tuple(tuple(s) for s in self.lr_steps)
        self.kalman_r = tuple(self.kalman_r)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch."""
        lr = self.lr
        for start, value in self.lr_steps:
            if epoch >= start:
                lr = value
        return lr


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def validate(self) -> "RunConfig":
        m, d, t = self.model, self.data, self.train
        m.validate()
        self.loss.validate()
        if m.frames != d.window_frames:
            raise ConfigError(f"model.frames={m.frames} but data window is {d.window_frames} frames")
        want_audio = int(round(d.window_s * m.feature_rate))
        if m.audio_frames != want_audio:
            raise ConfigError(f"model.audio_frames={m.audio_frames} but a {d.window_s} s window at "
                              f"{m.feature_rate} Hz has {want_audio} feature frames")
        if m.fps != d.fps:
            raise ConfigError(f"model.fps={m.fps} differs from data.fps={d.fps}")
        if d.clip_s < d.window_s or d.hop_s <= 0 or d.n_clips < 1:
            raise ConfigError("data needs n_clips >= 1, clip_s >= window_s and hop_s > 0")
        if not 0 <= d.test_frac < 1 or not 0 <= d.val_frac < 1 or d.test_frac + d.val_frac >= 1:
            raise ConfigError("test_frac and val_frac must be fractions summing below 1")
        for s in d.styles + d.test_styles:
            if s not in STYLES:
                raise ConfigError(f"unknown style {s!r}; choose from {STYLES}")
        if not d.styles:
            raise ConfigError("data.styles is empty")
        if t.batch < 1 or t.micro_batch < 1 or t.epochs < 0:
            raise ConfigError("train.batch, train.micro_batch must be >= 1 and epochs >= 0")
        if self.loss.variant == "appendix":
            if "R_wrist" not in m.joints:
                raise ConfigError("the appendix loss needs R_wrist among model.joints")
            if int(round(self.loss.tempo_window_s * d.fps)) > m.frames:
                raise ConfigError(f"loss.tempo_window_s={self.loss.tempo_window_s} exceeds the {d.window_s} s window")
        return self

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "loss": self.loss.to_dict(), "data": _plain(asdict(self.data)),
                "train": _plain(asdict(self.train)), "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown config sections {sorted(extra)}")
        try:
            return cls(
                model=ModelConfig.from_dict(d.get("model", {})),
                loss=LossConfig.from_dict(d.get("loss", {})),
                data=_build(DataConfig, d.get("data", {}), "data"),
                train=_build(TrainConfig, d.get("train", {}), "train"),
                seed=int(d.get("seed", 0)),
            ).validate()
        except TypeError as e:
            raise ConfigError(str(e)) from None


def _plain(d):
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in d.items()}
    if isinstance(d, (tuple, list)):
        return [_plain(v) for v in d]
    return d


def _build(cls, d: dict, section: str):
    extra = set(d) - {f.name for f in fields(cls)}
    if extra:
        raise ConfigError(f"unknown {section} keys {sorted(extra)}")
    return cls(**d)


def preset(name: str) -> RunConfig:
    if name == "default":
        return RunConfig().validate()
    if name == "tiny":
        return RunConfig(
            model=ModelConfig(frames=30, audio_frames=100, d_model=32, n_pose_blocks=2, n_hier_blocks=2, heads=4,
                              d_ff=64, joints=TINY_JOINTS, conv_channels=(16, 8, 8)),
            loss=LossConfig(tempo_window_s=0.8, tempo_hop_s=0.2),
            data=DataConfig(n_clips=5, clip_s=10.0, window_s=1.0, hop_s=1.0, participants=5),
            train=TrainConfig(epochs=20, batch=8, micro_batch=8, lr_steps=((50, 5e-4), (100, 1e-4))),
        ).validate()
    raise ConfigError(f"unknown preset {name!r}; choose default or tiny")


PRESETS = ("default", "tiny")


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings (values parsed as JSON when possible)."""
    d = json.loads(json.dumps(d))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"override {key!r}: no section {p!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key {parts[-1]!r}")
        node[parts[-1]] = parse_value(value)
    return d


def resolve(preset_name: str | None = None, config_path=None, overrides=None, base: dict | None = None) -> RunConfig:
    """Preset or file (or a stored config), then ``--set`` overrides, then the seed environment variable."""
    if config_path is not None:
        try:
            d = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"{config_path}: no such config file") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    elif base is not None:
        d = base
    else:
        d = preset(preset_name or "default").to_dict()
    d = apply_overrides(d, overrides)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            d["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return RunConfig.from_dict(d)


__all__ = ["ConfigError", "DataConfig", "TrainConfig", "RunConfig", "preset", "resolve", "apply_overrides",
           "PRESETS", "TINY_JOINTS", "SEED_ENV", "JOINT_NAMES"]
