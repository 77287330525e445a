"""Training losses (main and appendix formulations, P2A and tempogram cycle
terms) and the evaluation metric suite (MPJPE family, Procrustes, DTW).

Poses are [..., f, J, 3] in mm; velocities and accelerations use dt = 1 frame.
Loss functions accept Tensors or arrays and return Tensors; metric functions
take arrays and return floats.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernels
from .audiofeat import tempo_lags, tempogram, window_starts
from .numcore import ops
from .numcore.ops import central_diff
from .numcore.tensor import Tensor, as_tensor

LOSS_VARIANTS = ("main", "appendix")
SPEED_EPS = 1e-8


class LossConfigError(ValueError):
    pass


class ProcrustesError(ValueError):
    pass


@dataclass
class LossConfig:
    variant: str = "main"
    lambda_v: float = 1.0
    lambda_a: float = 1.0
    lambda_p1: float = 0.85
    lambda_p2: float = 0.1
    lambda_p3: float = 0.15
    lambda_audio: float = 0.15  # P2A term
    lambda_cycle: float = 20.0
    tempo_window_s: float = 2.0
    tempo_hop_s: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in LOSS_VARIANTS:
            raise LossConfigError(f"unknown loss variant {self.variant!r}; choose from {LOSS_VARIANTS}")
        for f in fields(self):
            if f.name.startswith("lambda_") and not getattr(self, f.name) >= 0:
                raise LossConfigError(f"{f.name} must be >= 0, got {getattr(self, f.name)}")
        if self.tempo_window_s <= 0 or self.tempo_hop_s <= 0:
            raise LossConfigError("tempogram window and hop must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise LossConfigError(f"unknown loss config keys {sorted(extra)}")
        return cls(**d)


@dataclass
class LossResult:
    total: Tensor
    terms: dict  # unweighted values
    weights: dict

    def breakdown(self) -> dict:
        out = {"total": float(self.total.data)}
        for k, v in self.terms.items():
            out[k] = v
            if k in self.weights:
                out[f"w_{k}"] = self.weights[k]
        return out


def _check_same(op: str, a, b) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} differ")
    if a.shape[-1] != 3:
        raise ValueError(f"{op}: expected [..., J, 3] arrays, got {a.shape}")


# ------------------------------------------------------------ basic metrics

def mpjpe_loss(pred, gt) -> Tensor:
    """Differentiable mean per-joint Euclidean distance."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_same("mpjpe", pred, gt)
    return ops.mean(ops.norm(ops.sub(pred, gt), axis=-1))


def mpjpe(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_same("mpjpe", pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def per_joint_mpjpe(pred, gt) -> np.ndarray:
    """[J] mean distance per joint over all leading axes."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_same("per_joint_mpjpe", pred, gt)
    d = np.linalg.norm(pred - gt, axis=-1)
    return d.reshape(-1, d.shape[-1]).mean(axis=0)


def derivative_error(pred, gt, order: int, dt: float = 1.0) -> float:
    """MPJVE (order 1) or MPJAE (order 2), differencing along the frame axis (-3)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_same("derivative_error", pred, gt)
    if pred.ndim < 3 or pred.shape[-3] < 3:
        raise ValueError(f"derivative_error needs at least 3 frames, got shape {pred.shape}")
    axis = pred.ndim - 3
    dp, dg = pred, gt
    for _ in range(order):
        dp, dg = central_diff(dp, dt, axis), central_diff(dg, dt, axis)
    return mpjpe(dp, dg)


def gt_dynamics(pose, dt: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pose, velocity, acceleration) targets from a pose sequence [..., f, J, 3]."""
    p = np.asarray(pose, dtype=np.float64)
    axis = p.ndim - 3
    v = central_diff(p, dt, axis)
    return p, v, central_diff(v, dt, axis)


# --------------------------------------------------------------- Procrustes

def procrustes_align(A, B) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity (s, R, t) minimizing ||s R a_i + t - b_i||^2 over points a_i, b_i (rows)."""
    A, B = np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
        raise ValueError(f"procrustes_align: expected two J x 3 arrays, got {A.shape} and {B.shape}")
    if A.shape[0] < 3:
        raise ProcrustesError("procrustes_align needs at least 3 points")
    s, R, t, ok = _procrustes_batch(A[None], B[None])
    if not ok[0]:
        raise ProcrustesError("procrustes_align: source points are collinear or coincident")
    return float(s[0]), R[0], t[0]


def _procrustes_batch(A: np.ndarray, B: np.ndarray):
    """Batched Umeyama alignment of A onto B, both [n, J, 3]; also returns a non-degeneracy mask."""
    mu_a, mu_b = A.mean(axis=1, keepdims=True), B.mean(axis=1, keepdims=True)
    A0, B0 = A - mu_a, B - mu_b
    sv_a = np.linalg.svd(A0, compute_uv=False)
    ok = sv_a[:, 1] > 1e-9 * np.maximum(sv_a[:, 0], 1e-300)
    cov = np.einsum("nji,njk->nik", B0, A0)  # sum_j b_j a_j^T
    U, S, Vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    sign[sign == 0] = 1.0
    D = np.ones((len(A), 3))
    D[:, 2] = sign
    R = np.einsum("nij,nj,njk->nik", U, D, Vt)
    var_a = np.einsum("nji,nji->n", A0, A0)
    s = np.einsum("ni,ni->n", S, D) / np.where(ok, var_a, 1.0)
    t = mu_b[:, 0] - s[:, None] * np.einsum("nij,nj->ni", R, mu_a[:, 0])
    return s, R, t, ok


def apply_similarity(s: float, R: np.ndarray, t: np.ndarray, X: np.ndarray) -> np.ndarray:
    return s * np.asarray(X) @ np.asarray(R).T + t


def p_mpjpe(pred, gt, return_skipped: bool = False):
    """MPJPE after aligning every predicted frame onto its ground-truth frame."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_same("p_mpjpe", pred, gt)
    J = pred.shape[-2]
    if J < 3:
        raise ProcrustesError("p_mpjpe needs at least 3 joints")
    P, G = pred.reshape(-1, J, 3), gt.reshape(-1, J, 3)
    s, R, t, ok = _procrustes_batch(P, G)
    skipped = int((~ok).sum())
    if skipped:
        warnings.warn(f"p_mpjpe: skipped {skipped} degenerate frame(s)", RuntimeWarning, stacklevel=2)
    if not ok.any():
        raise ProcrustesError("p_mpjpe: every frame is degenerate")
    aligned = s[ok, None, None] * np.einsum("nij,nkj->nki", R[ok], P[ok]) + t[ok, None, :]
    value = float(np.linalg.norm(aligned - G[ok], axis=-1).mean())
    return (value, skipped) if return_skipped else value


# ---------------------------------------------------------------------- DTW

def dtw_distance(a, b) -> tuple[float, int]:
    """Accumulated Euclidean DTW cost and the length of the optimal path for sequences [n, d], [m, d]."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("dtw: empty sequence")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    total, steps = kernels.dtw_accumulate(np.ascontiguousarray(cost))
    return float(total), int(steps)


def root_center(pose, joints) -> np.ndarray:
    """Subtract the mid-shoulder point, or the joint centroid when a shoulder is missing."""
    pose = np.asarray(pose, dtype=np.float64)
    joints = list(joints)
    if "L_shoulder" in joints and "R_shoulder" in joints:
        root = 0.5 * (pose[..., joints.index("L_shoulder"), :] + pose[..., joints.index("R_shoulder"), :])
    else:
        root = pose.mean(axis=-2)
    return pose - root[..., None, :]


def dtw(pred, gt, joints=None) -> float:
    """Per-joint DTW cost divided by path length, averaged over joints.

    Inputs are [f, J, 3]; with ``joints`` both sequences are root-centered first.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.ndim != 3 or gt.ndim != 3 or pred.shape[1:] != gt.shape[1:]:
        raise ValueError(f"dtw: expected [f, J, 3] sequences with equal J, got {pred.shape} and {gt.shape}")
    if joints is not None:
        pred, gt = root_center(pred, joints), root_center(gt, joints)
    vals = []
    for j in range(pred.shape[1]):
        c, n = dtw_distance(pred[:, j], gt[:, j])
        vals.append(c / n)
    return float(np.mean(vals))


# -------------------------------------------------------------- max cosine

def max_cosine_similarity(pred, gt) -> Tensor:
    """Per-vector (x_hat/V).(x/V) with V = max(|x_hat|, |x|); 1 where both vectors vanish."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_same("max_cosine", pred, gt)
    V = ops.maximum(ops.norm(pred, axis=-1), ops.norm(gt, axis=-1))
    zero = V.data == 0
    Vsafe = ops.add(V, zero.astype(np.float64))
    s = ops.div(ops.sum(ops.mul(pred, gt), axis=-1), ops.mul(Vsafe, Vsafe))
    return ops.where(~zero, s, 1.0)


def max_cosine_loss(pred, gt) -> Tensor:
    """mean(1 - s); ranges over [0, 2]."""
    return ops.mean(ops.sub(1.0, max_cosine_similarity(pred, gt)))


# ---------------------------------------------------------------- tempogram

@dataclass
class PoseTempogram:
    values: Tensor  # [..., windows, tempi]
    bpm: np.ndarray
    window_s: float
    frame_rate: float

    def dominant_bpm(self) -> float:
        v = self.values.data.reshape(-1, len(self.bpm)).sum(axis=0)
        return float(self.bpm[int(np.argmax(v))])


def speed_tempogram(speed, frame_rate: float, window_s: float, hop_s: float | None = None) -> PoseTempogram:
    """Differentiable autocorrelation tempogram of a [..., f] series (same definition as audiofeat)."""
    speed = as_tensor(speed)
    lead, n = speed.shape[:-1], speed.shape[-1]
    window = int(round(window_s * frame_rate))
    hop = int(round((hop_s if hop_s is not None else window_s / 4) * frame_rate))
    starts = window_starts(n, window, hop)
    lags = tempo_lags(frame_rate, window)
    x = ops.reshape(speed, (-1, n))
    X = ops.index(x, (slice(None), starts[:, None] + np.arange(window)[None, :]))  # b, R, W
    Xc = ops.sub(X, ops.mean(X, axis=-1, keepdims=True))
    padded = ops.concat([Xc, Tensor(np.zeros(Xc.shape))], axis=-1)
    shifted = ops.index(padded, (Ellipsis, lags[:, None] + np.arange(window)[None, :]))  # b, R, L, W
    b, R = Xc.shape[0], Xc.shape[1]
    ac = ops.sum(ops.mul(shifted, ops.reshape(Xc, (b, R, 1, window))), axis=-1)
    ac0 = ops.sum(ops.mul(Xc, Xc), axis=-1, keepdims=True)
    flat = ac0.data <= 1e-12 * window
    r = ops.where(np.broadcast_to(~flat, ac.shape), ops.div(ac, ops.add(ac0, flat.astype(np.float64))), 0.0)
    values = ops.reshape(ops.relu(r), lead + (R, len(lags)))
    return PoseTempogram(values, 60.0 * frame_rate / lags, window_s, frame_rate)


def joint_speed(vel, joint_index: int) -> Tensor:
    """sqrt(|v|^2 + eps) of one joint from [..., f, J, 3] velocities."""
    v = ops.index(as_tensor(vel), (Ellipsis, joint_index, slice(None)))
    return ops.sqrt(ops.add(ops.sum(ops.mul(v, v), axis=-1), SPEED_EPS))


def pose_tempogram(pred_pose, fps: float, window_s: float, joint_index: int, hop_s: float | None = None,
                   dt: float = 1.0) -> PoseTempogram:
    """Tempogram of the speed of one joint (the right wrist) of a pose sequence [..., f, J, 3]."""
    p = as_tensor(pred_pose)
    if p.ndim < 3:
        raise ValueError(f"pose_tempogram: expected [..., f, J, 3], got {p.shape}")
    if round(window_s * fps) > p.shape[-3]:
        raise ValueError(f"pose_tempogram: window of {window_s} s exceeds the {p.shape[-3]}-frame sequence")
    vel = ops.diff_time(p, dt, axis=p.ndim - 3)
    return speed_tempogram(joint_speed(vel, joint_index), fps, window_s, hop_s)


def envelope_on_frames(envelope, feature_rate: float, fps: float, n_frames: int) -> np.ndarray:
    """Box-average an envelope sampled at ``feature_rate`` over each pose frame interval."""
    env = np.asarray(envelope, dtype=np.float64)
    edges_src = np.arange(len(env) + 1) / feature_rate
    integral = np.concatenate([[0.0], np.cumsum(env) / feature_rate])
    edges = np.arange(n_frames + 1) / fps
    if edges[-1] > edges_src[-1] + 1e-9:
        raise ValueError(f"envelope covers {edges_src[-1]:.3f} s, pose frames need {edges[-1]:.3f} s")
    area = np.interp(edges, edges_src, integral)
    return np.diff(area) * fps


def audio_tempogram(envelope, feature_rate: float, fps: float, n_frames: int, window_s: float,
                    hop_s: float | None = None) -> np.ndarray:
    """Ground-truth tempogram values [windows, tempi] on the pose frame grid."""
    env = envelope_on_frames(envelope, feature_rate, fps, n_frames)
    return tempogram(env, fps, window_s, hop_s).values


def cycle_loss(pred_tempo: Tensor, gt_tempo) -> Tensor:
    gt_tempo = np.asarray(gt_tempo.data if isinstance(gt_tempo, Tensor) else gt_tempo, dtype=np.float64)
    if pred_tempo.shape != gt_tempo.shape:
        raise ValueError(f"cycle loss: tempogram shapes {pred_tempo.shape} and {gt_tempo.shape} differ")
    d = ops.sub(pred_tempo, gt_tempo)
    return ops.mean(ops.mul(d, d))


# ------------------------------------------------------------------- totals

def _targets(gt):
    if isinstance(gt, dict):
        return gt["pose"], gt["vel"], gt["acc"]
    return gt


def total_loss_main(triple, gt, cfg: LossConfig) -> LossResult:
    """MPJPE(pose) + lambda_v (1 - maxcos(vel)) + lambda_a (1 - maxcos(acc))."""
    gp, gv, ga = _targets(gt)
    lp = mpjpe_loss(triple.pose, gp)
    lv = max_cosine_loss(triple.vel, gv)
    la = max_cosine_loss(triple.acc, ga)
    total = ops.add(ops.add(lp, ops.mul(lv, cfg.lambda_v)), ops.mul(la, cfg.lambda_a))
    terms = {"mpjpe": float(lp.data), "vel_cos": float(lv.data), "acc_cos": float(la.data)}
    return LossResult(total, terms, {"mpjpe": 1.0, "vel_cos": cfg.lambda_v, "acc_cos": cfg.lambda_a})


def total_loss_appendix(triple, gt, audio_pose, gt_tempogram, cfg: LossConfig, fps: float,
                        joint_index: int) -> LossResult:
    """L_P + lambda_A L_A + lambda_C L_C.

    L_P weighs MPJPE of the pose, velocity and acceleration estimates; L_A is
    the MPJPE of the audio-only pose head; L_C is the mean squared difference
    between the ground-truth (audio) tempogram and the tempogram of the
    predicted right-wrist speed.
    """
    if gt_tempogram is None:
        raise LossConfigError("appendix loss needs a ground-truth tempogram")
    gp, gv, ga = _targets(gt)
    p_err = mpjpe_loss(triple.pose, gp)
    v_err = mpjpe_loss(triple.vel, gv)
    a_err = mpjpe_loss(triple.acc, ga)
    l_p = ops.add(ops.add(ops.mul(p_err, cfg.lambda_p1), ops.mul(v_err, cfg.lambda_p2)), ops.mul(a_err, cfg.lambda_p3))
    if audio_pose is None:
        warnings.warn("audio-only pose prediction unavailable; P2A loss set to 0", RuntimeWarning, stacklevel=2)
        l_a = Tensor(0.0)
    else:
        l_a = mpjpe_loss(audio_pose, gp)
    speed = joint_speed(triple.vel, joint_index)
    tempo = speed_tempogram(speed, fps, cfg.tempo_window_s, cfg.tempo_hop_s)
    l_c = cycle_loss(tempo.values, gt_tempogram)
    total = ops.add(ops.add(l_p, ops.mul(l_a, cfg.lambda_audio)), ops.mul(l_c, cfg.lambda_cycle))
    terms = {"mpjpe": float(p_err.data), "mpjve": float(v_err.data), "mpjae": float(a_err.data),
             "L_P": float(l_p.data), "L_A": float(l_a.data), "L_C": float(l_c.data)}
    weights = {"mpjpe": cfg.lambda_p1, "mpjve": cfg.lambda_p2, "mpjae": cfg.lambda_p3, "L_P": 1.0,
               "L_A": cfg.lambda_audio, "L_C": cfg.lambda_cycle}
    return LossResult(total, terms, weights)


# ------------------------------------------------------------------ reports

@dataclass
class MetricsReport:
    mpjpe: float
    p_mpjpe: float
    mpjve: float
    mpjae: float
    dtw: float
    per_joint: dict = field(default_factory=dict)
    n_clips: int = 0
    n_frames: int = 0
    skipped_frames: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def write_per_joint_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["joint", "mpjpe_mm"])
            for j, v in self.per_joint.items():
                w.writerow([j, repr(float(v))])


def evaluate(pred, gt, joints, dt: float = 1.0) -> MetricsReport:
    """Metrics over clips shaped [n, f, J, 3] (or one clip [f, J, 3])."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.ndim == 3:
        pred, gt = pred[None], gt[None]
    _check_same("evaluate", pred, gt)
    joints = list(joints)
    if pred.shape[-2] != len(joints):
        raise ValueError(f"evaluate: {pred.shape[-2]} joints in arrays, {len(joints)} names given")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pm, skipped = p_mpjpe(pred, gt, return_skipped=True)
    return MetricsReport(
        mpjpe=mpjpe(pred, gt),
        p_mpjpe=pm,
        mpjve=derivative_error(pred, gt, 1, dt),
        mpjae=derivative_error(pred, gt, 2, dt),
        dtw=float(np.mean([dtw(p, g, joints) for p, g in zip(pred, gt)])),
        per_joint=dict(zip(joints, map(float, per_joint_mpjpe(pred, gt)))),
        n_clips=int(pred.shape[0]),
        n_frames=int(pred.shape[0] * pred.shape[1]),
        skipped_frames=skipped,
    )
