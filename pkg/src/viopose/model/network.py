"""Audiovisual pose network: pose and audio encoders, bottleneck fusion, the
three-level dynamics hierarchy (acceleration, velocity, pose), output heads
and bidirectional mixing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..numcore import ops
from ..numcore.tensor import Tensor
from ..violinsim import JOINT_NAMES
from .dynamics import MIXING_MODES, DynamicsTriple, bidirectional_mix
from .layers import BatchNorm, Conv1d, Linear, ParamStore, TransformerBlock, interp_matrix

HIERARCHY_MODES = ("cascade", "no_cascade", "concat", "conditioning", "parallel")
N_AUDIO_FEATURES = 35


@dataclass
class ModelConfig:
    frames: int = 90  # f
    audio_frames: int = 300  # F
    feature_rate: int = 100  # SR
    d_model: int = 256
    n_pose_blocks: int = 3
    n_hier_blocks: int = 3
    heads: int = 8
    d_ff: int = 512
    joints: tuple = JOINT_NAMES
    fps: float = 30.0
    conv_channels: tuple = (64, 32, 16)
    conv_kernel: int = 3
    use_audio: bool = True
    hierarchy: str = "cascade"
    mixing: str = "full"
    image_size: tuple = (1280, 720)
    # fixed output scales: heads emit O(1) numbers, the mixing works in mm, mm/frame, mm/frame^2
    pos_scale: float = 100.0
    vel_scale: float = 10.0
    acc_scale: float = 5.0

    def __post_init__(self):
        self.joints = tuple(self.joints)
        self.conv_channels = tuple(self.conv_channels)
        self.image_size = tuple(self.image_size)
        self.validate()

    def validate(self) -> None:
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.hierarchy not in HIERARCHY_MODES:
            raise ValueError(f"unknown hierarchy mode {self.hierarchy!r}; choose from {HIERARCHY_MODES}")
        if self.mixing not in MIXING_MODES:
            raise ValueError(f"unknown mixing mode {self.mixing!r}; choose from {MIXING_MODES}")
        unknown = set(self.joints) - set(JOINT_NAMES)
        if unknown:
            raise ValueError(f"unknown joints {sorted(unknown)}")
        if self.frames < 3:
            raise ValueError("need at least 3 frames for time differencing")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("joints", "conv_channels", "image_size"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown model config keys {sorted(extra)}")
        return cls(**d)


@dataclass
class ModelOutput:
    dynamics: DynamicsTriple
    audio_pose: Tensor | None = None  # audio-only pose prediction [b, f, J, 3]
    audio_latents: list = field(default_factory=list)


class VioPoseModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = c = config
        self.store = s = ParamStore(np.random.default_rng(seed))
        D, J = c.d_model, c.n_joints
        self.buffers = {
            "audio_mean": np.zeros(N_AUDIO_FEATURES),
            "audio_std": np.ones(N_AUDIO_FEATURES),
        }

        self.pose_embed = Linear(s, "pose.embed", 2 * J, D)
        self.pose_pos = s.normal("pose.pos_emb", (c.frames, D))
        self.pose_blocks = [TransformerBlock(s, f"pose.block{n}", D, c.heads, c.d_ff) for n in range(c.n_pose_blocks)]

        if c.use_audio:
            chans = (N_AUDIO_FEATURES,) + c.conv_channels
            self.convs = [Conv1d(s, f"audio.conv{i}", chans[i], chans[i + 1], c.conv_kernel) for i in range(len(c.conv_channels))]
            self.audio_lift = Linear(s, "audio.lift", chans[-1], D)
            self.audio_pos = s.normal("audio.pos_emb", (c.frames, D))
            self.audio_blocks = [TransformerBlock(s, f"audio.block{n}", D, c.heads, c.d_ff) for n in range(c.n_hier_blocks)]
            self.audio_head = Linear(s, "audio.p2a", D, 3 * J)
            self.fuse_lin = Linear(s, "fuse", 2 * D, D)
        else:
            self.audio_const = [s.normal(f"noaudio.latent{n}", (D,)) for n in range(c.n_hier_blocks)]
            self.fuse_lin = Linear(s, "fuse", D, D)

        cross = c.hierarchy == "conditioning"
        self.hier_blocks = {}
        self.hier_norm = {}
        self.hier_concat = {}
        for n in range(1, c.n_hier_blocks + 1):
            for i in (3, 2, 1):
                key = f"hier.n{n}.l{i}"
                self.hier_blocks[(n, i)] = TransformerBlock(s, key, D, c.heads, c.d_ff, cross=cross)
                self.hier_norm[(n, i)] = BatchNorm(s, f"{key}.bn", D)
                if c.hierarchy == "concat":
                    self.hier_concat[(n, i)] = Linear(s, f"{key}.cat", 2 * D, D)
        self.heads = {i: Linear(s, f"head.l{i}", D, 3 * J) for i in (3, 2, 1)}

    # ------------------------------------------------------------ params

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    def n_params(self) -> int:
        return self.store.count()

    # ----------------------------------------------------------- encoders

    def normalize_keypoints(self, kp) -> np.ndarray:
        w, h = self.config.image_size
        kp = np.asarray(kp.data if isinstance(kp, Tensor) else kp, dtype=np.float64)
        return (kp - np.array([w / 2, h / 2])) / (w / 2)

    def embed_pose(self, kp2d) -> Tensor:
        """Transformer latents [b, f, D] from pixel keypoints [b, f, J, 2]."""
        c = self.config
        x = self.normalize_keypoints(kp2d)
        if x.ndim != 4 or x.shape[1:] != (c.frames, c.n_joints, 2):
            raise ValueError(f"embed_pose: keypoints shaped {x.shape}, expected (b, {c.frames}, {c.n_joints}, 2)")
        b = x.shape[0]
        e = ops.add(self.pose_embed(Tensor(x.reshape(b, c.frames, -1))), self.pose_pos)
        for blk in self.pose_blocks:
            e = blk(e)
        return e

    def encode_audio(self, features) -> list[Tensor]:
        """All N_H audio transformer outputs, each [b, f, D], from features [b, F, 35]."""
        c = self.config
        x = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != N_AUDIO_FEATURES:
            raise ValueError(f"encode_audio: features shaped {x.shape}, expected (b, F, {N_AUDIO_FEATURES})")
        if x.shape[1] < c.frames:
            raise ValueError(f"encode_audio: cannot resample {x.shape[1]} audio frames down to {c.frames} pose frames")
        x = (x - self.buffers["audio_mean"]) / self.buffers["audio_std"]
        h = Tensor(np.ascontiguousarray(x.transpose(0, 2, 1)))  # b, 35, F
        for conv in self.convs:
            h = ops.relu(conv(h))
        h = ops.matmul(h, Tensor(interp_matrix(x.shape[1], c.frames)))  # b, C, f
        e = ops.add(self.audio_lift(ops.transpose(h, (0, 2, 1))), self.audio_pos)
        outs = []
        for blk in self.audio_blocks:
            e = blk(e)
            outs.append(e)
        return outs

    def fuse(self, e_pose: Tensor, e_audio: Tensor | None) -> Tensor:
        if e_audio is None:
            return ops.relu(self.fuse_lin(e_pose))
        if e_pose.shape != e_audio.shape:
            raise ValueError(f"fuse: pose latents {e_pose.shape} vs audio latents {e_audio.shape}")
        return ops.relu(self.fuse_lin(ops.concat([e_pose, e_audio], axis=-1)))

    # ---------------------------------------------------------- hierarchy

    def hierarchy_latents(self, e_m: Tensor, audio_latents: list, train: bool = True) -> dict[int, Tensor]:
        """Top-block latents h_i for levels i = 1 (pose), 2 (velocity), 3 (acceleration)."""
        c = self.config
        if len(audio_latents) != c.n_hier_blocks:
            raise ValueError(f"hierarchy needs {c.n_hier_blocks} audio latents, got {len(audio_latents)}")
        h = {i: e_m for i in (1, 2, 3)}
        for n in range(1, c.n_hier_blocks + 1):
            above = audio_latents[n - 1]
            new = {}
            for i in (3, 2, 1):
                blk, bn = self.hier_blocks[(n, i)], self.hier_norm[(n, i)]
                if c.hierarchy == "conditioning":
                    z = blk(h[i], above)
                else:
                    g = blk(h[i])
                    if c.hierarchy == "cascade":
                        z = ops.add(g, above)
                    elif c.hierarchy == "concat":
                        z = self.hier_concat[(n, i)](ops.concat([g, above], axis=-1))
                    else:  # no_cascade, parallel
                        z = g
                new[i] = bn(z, train)
                above = new[i]
            h = new
        return h

    def hierarchy_forward(self, e_m: Tensor, audio_latents: list, train: bool = True):
        """Initial (acc, vel, pose) estimates, each [b, f, J, 3] in mm-based units."""
        c = self.config
        h = self.hierarchy_latents(e_m, audio_latents, train)
        b, f = e_m.shape[0], e_m.shape[1]
        shape = (b, f, c.n_joints, 3)
        acc = ops.mul(ops.reshape(self.heads[3](h[3]), shape), c.acc_scale)
        vel = ops.mul(ops.reshape(self.heads[2](h[2]), shape), c.vel_scale)
        pose = ops.mul(ops.reshape(self.heads[1](h[1]), shape), c.pos_scale)
        return acc, vel, pose

    # ------------------------------------------------------------ forward

    def forward(self, kp2d, features=None, train: bool = True) -> ModelOutput:
        c = self.config
        stage = "embed_pose"
        try:
            e_p = self.embed_pose(kp2d)
            b = e_p.shape[0]
            stage = "encode_audio"
            if c.use_audio:
                if features is None:
                    raise ValueError("audio features required by this configuration")
                e_a = self.encode_audio(features)
                if e_a[0].shape[0] != b:
                    raise ValueError(f"audio batch {e_a[0].shape[0]} differs from pose batch {b}")
                final = e_a[-1]
            else:
                ones = Tensor(np.ones((b, c.frames, 1)))
                e_a = [ops.mul(ones, lat) for lat in self.audio_const]
                final = None
            stage = "fuse"
            e_m = self.fuse(e_p, final)
            stage = "hierarchy"
            acc, vel, pose = self.hierarchy_forward(e_m, e_a, train)
            stage = "mixing"
            mode = "none" if c.hierarchy == "parallel" else c.mixing
            dyn = bidirectional_mix(pose, vel, acc, 1.0, mode)
        except ValueError as err:
            raise type(err)(f"[{stage}] {err}") from err
        p2a = None
        if c.use_audio:
            p2a = ops.mul(ops.reshape(self.audio_head(final), (b, c.frames, c.n_joints, 3)), c.pos_scale)
        return ModelOutput(dyn, p2a, e_a)

    __call__ = forward


def identity_blocks(model: VioPoseModel) -> None:
    """Zero every transformer residual branch (construction checks only)."""
    for blk in list(model.pose_blocks) + list(getattr(model, "audio_blocks", [])) + list(model.hier_blocks.values()):
        blk.zero_residuals()

