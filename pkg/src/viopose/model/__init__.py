"""Audiovisual 3D pose network, dynamics mixing, Kalman fusion and checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dynamics import (
    MIXING_MODES, DynamicsTriple, bidirectional_mix, ca_model, differentiate_time, integrate_time, kalman_fuse,
)
from .network import HIERARCHY_MODES, ModelConfig, ModelOutput, VioPoseModel, identity_blocks

__all__ = [
    "CheckpointError", "load_checkpoint", "save_checkpoint", "MIXING_MODES", "DynamicsTriple",
    "bidirectional_mix", "ca_model", "differentiate_time", "integrate_time", "kalman_fuse",
    "HIERARCHY_MODES", "ModelConfig", "ModelOutput", "VioPoseModel", "identity_blocks",
]
