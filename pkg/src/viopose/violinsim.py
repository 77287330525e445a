"""Synthetic violin performances: scripted bowing and vibrato, the 3D upper-body
poses they imply, noisy 2D projections and an audio track driven by the same
bow motion.  Also the on-disk sample format.

World frame (mm): x toward the player's left, y up, z toward the camera.  The
mid-shoulder point sits at the participant's root offset.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audiofeat import AudioClip, read_wav, write_wav
from .numcore.ops import central_diff

JOINT_NAMES = ("L_shoulder", "R_shoulder", "L_elbow", "R_elbow", "L_wrist", "R_wrist", "L_hand", "R_hand")
JOINT_INDEX = {n: i for i, n in enumerate(JOINT_NAMES)}
BONES = ((0, 1), (0, 2), (2, 4), (4, 6), (1, 3), (3, 5), (5, 7))
STYLES = ("exercise", "piece", "vibrato")
POSE_MAGIC = b"VPSE"

BOW_HALF_RANGE = 200.0  # mm either side of the contact point
CURVE_SAGITTA = 30.0
VIBRATO_DEPTH_SEMITONES = 0.25
VIBRATO_AM = 0.3

_BOW_AXIS = np.array([-1.0, -0.15, 0.35]) / np.linalg.norm([-1.0, -0.15, 0.35])
_BOW_NORMAL = np.cross(_BOW_AXIS, [0.0, 1.0, 0.0])
_BOW_NORMAL /= np.linalg.norm(_BOW_NORMAL)
_NECK_AXIS = np.array([0.45, 0.1, 1.0]) / np.linalg.norm([0.45, 0.1, 1.0])


class FormatError(ValueError):
    """A sample file is missing, truncated or malformed."""


class ValidationError(ValueError):
    """Sample contents disagree with their metadata."""


# ------------------------------------------------------------------ scripts

@dataclass
class Stroke:
    start: float
    end: float
    direction: int  # +1 toward the bow tip side of the axis, -1 back
    amplitude: float  # mm travelled along the bow axis
    straight: bool = True
    pitch: float = 69.0  # MIDI note number


@dataclass
class VibratoSegment:
    start: float
    end: float
    rate: float  # Hz
    amplitude: float = 10.0  # peak displacement, mm

    def event_times(self) -> np.ndarray:
        """Turnarounds of the oscillation (two per cycle)."""
        t = self.start + (2 * np.arange(int(2 * (self.end - self.start) * self.rate) + 1) + 1) / (4 * self.rate)
        return t[t < self.end - 1e-9]


@dataclass
class PerformanceScript:
    duration: float
    fps: float = 30.0
    strokes: list[Stroke] = field(default_factory=list)
    vibratos: list[VibratoSegment] = field(default_factory=list)
    hold_times: list[float] = field(default_factory=lambda: [0.0])
    hold_angles: list[float] = field(default_factory=lambda: [165.0])
    bow_start: float = 0.0  # initial position along the bow axis, mm
    seed: int = 0
    participant: int = 0
    style: str = "exercise"

    def __post_init__(self):
        self.strokes = [s if isinstance(s, Stroke) else Stroke(**s) for s in self.strokes]
        self.vibratos = [v if isinstance(v, VibratoSegment) else VibratoSegment(**v) for v in self.vibratos]
        self.validate()

    def validate(self) -> None:
        if self.duration <= 0 or self.fps <= 0:
            raise ValueError("duration and fps must be positive")
        prev = 0.0
        for s in self.strokes:
            if s.end <= s.start or s.start < prev - 1e-9:
                raise ValueError(f"strokes must be non-overlapping and time-ordered (stroke at {s.start:.3f}s)")
            if s.direction not in (-1, 1):
                raise ValueError("stroke direction must be +1 or -1")
            prev = s.end
        for v in self.vibratos:
            if not 4.0 <= v.rate <= 9.0:
                raise ValueError(f"vibrato rate {v.rate} Hz outside [4, 9]")
            if v.end <= v.start:
                raise ValueError("empty vibrato segment")
        if len(self.hold_times) != len(self.hold_angles) or not self.hold_times:
            raise ValueError("hold profile needs matching, non-empty times and angles")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps))

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.fps

    def bow_change_times(self) -> np.ndarray:
        """Boundaries between contiguous strokes of opposite direction."""
        out = [b.start for a, b in zip(self.strokes, self.strokes[1:])
               if abs(a.end - b.start) < 1e-9 and a.direction != b.direction]
        return np.array(out)

    def vibrato_event_times(self) -> np.ndarray:
        if not self.vibratos:
            return np.zeros(0)
        return np.concatenate([v.event_times() for v in self.vibratos])

    def hold_angle(self, t) -> np.ndarray:
        return np.interp(t, self.hold_times, self.hold_angles)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PerformanceScript":
        return cls(**d)


def _frames(t, fps):
    return round(t * fps) / fps


def generate_script(seed: int, duration_s: float, style: str = "exercise", fps: float = 30.0,
                    participant: int | None = None, min_duration_s: float = 3.0) -> PerformanceScript:
    """Random but reproducible performance.

    exercise: regular full strokes, open string, no vibrato.
    piece: mixed stroke lengths, some curved strokes, a few vibrato passages.
    vibrato: like piece, with vibrato over most of the clip.
    """
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; choose one of {STYLES}")
    if duration_s < min_duration_s:
        raise ValueError(f"duration {duration_s}s shorter than the {min_duration_s}s window")
    rng = np.random.default_rng([seed, STYLES.index(style)])
    participant = seed if participant is None else participant
    hold_base = 160.0 + 8.0 * np.random.default_rng([participant, 7]).uniform(-1, 1)

    strokes: list[Stroke] = []
    if style == "exercise":
        dur = float(rng.choice([0.5, 0.75, 1.0]))
        amp = float(rng.uniform(300, 400))
        pitch = float(rng.choice([55, 62, 69, 76]))  # open strings
        t, d = 0.0, 1
        while t + dur <= duration_s + 1e-9:
            strokes.append(Stroke(t, t + dur, d, amp, True, pitch))
            t, d = t + dur, -d
        return PerformanceScript(duration_s, fps, strokes, [], [0.0], [hold_base], -amp / 2, seed, participant, style)

    scale = np.array([0, 2, 4, 5, 7, 9, 11])
    root = int(rng.choice([55, 57, 60, 62, 67]))
    pos = float(rng.uniform(-150, 150))
    start_pos = pos
    t, d = 0.0, int(rng.choice([-1, 1]))
    while duration_s - t >= 0.4:
        dur = min(_frames(rng.uniform(0.4, 1.4), fps), duration_s - t)
        if duration_s - (t + dur) < 0.4:
            dur = duration_s - t
        room = BOW_HALF_RANGE - d * pos
        if room < 80:  # out of bow; turn around
            d = -d
            room = BOW_HALF_RANGE - d * pos
        amp = float(rng.uniform(min(80.0, room), room))
        note = root + 12 * int(rng.integers(0, 2)) + int(rng.choice(scale))
        strokes.append(Stroke(t, t + dur, d, amp, bool(rng.random() > 0.3), float(note)))
        pos += d * amp
        t, d = t + dur, -d
    if not any(not s.straight for s in strokes):
        strokes[int(rng.integers(len(strokes)))].straight = False

    vibratos: list[VibratoSegment] = []
    if style == "vibrato":
        spans = [(0.0, duration_s)]
    else:
        n = max(1, int(duration_s // 10))
        edges = np.linspace(0, duration_s, n + 1)
        spans = []
        for a, b in zip(edges[:-1], edges[1:]):
            length = rng.uniform(2.0, min(4.0, b - a))
            s0 = rng.uniform(a, b - length)
            spans.append((s0, s0 + length))
    for a, b in spans:
        rate = float(rng.uniform(4.5, 8.0))
        cycles = int(np.floor((b - a - 0.2) * rate))
        a = a + 0.1
        vibratos.append(VibratoSegment(float(a), float(a + cycles / rate), rate, 10.0))

    knots = np.linspace(0, duration_s, max(2, int(duration_s // 2) + 1))
    angles = hold_base + rng.uniform(-6, 6, len(knots))
    return PerformanceScript(duration_s, fps, strokes, vibratos, knots.tolist(), angles.tolist(),
                             start_pos, seed, participant, style)


# --------------------------------------------------------------- kinematics

def bow_kinematics(script: PerformanceScript, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position along the bow axis, perpendicular (curvature) offset and axial speed at times ``t``.

    Each stroke is a cosine-eased sweep, so speed vanishes at every turnaround.
    """
    t = np.asarray(t, dtype=np.float64)
    pos = np.full(t.shape, script.bow_start)
    perp = np.zeros(t.shape)
    speed = np.zeros(t.shape)
    p = script.bow_start
    for s in script.strokes:
        T = s.end - s.start
        after = t >= s.end
        pos[after] = p + s.direction * s.amplitude
        m = (t >= s.start) & (t < s.end)
        tau = (t[m] - s.start) / T
        pos[m] = p + s.direction * s.amplitude * 0.5 * (1 - np.cos(np.pi * tau))
        speed[m] = s.direction * s.amplitude * 0.5 * np.pi / T * np.sin(np.pi * tau)
        if not s.straight:
            perp[m] = CURVE_SAGITTA * 4 * tau * (1 - tau)
        p += s.direction * s.amplitude
    return pos, perp, speed


def vibrato_displacement(script: PerformanceScript, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    d = np.zeros(t.shape)
    for v in script.vibratos:
        m = (t >= v.start) & (t < v.end)
        d[m] = v.amplitude * np.sin(2 * np.pi * v.rate * (t[m] - v.start))
    return d


@dataclass
class Skeleton:
    shoulder_half: float = 180.0
    upper_arm: float = 300.0
    forearm: float = 260.0
    hand: float = 80.0
    root: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def for_participant(cls, participant: int) -> "Skeleton":
        rng = np.random.default_rng([participant, 11])
        s = rng.uniform(0.93, 1.07)
        root = (rng.uniform(-80, 80), rng.uniform(-40, 40), rng.uniform(-150, 150))
        return cls(180.0 * s, 300.0 * s, 260.0 * s, 80.0 * s, tuple(float(r) for r in root))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def two_link_ik(shoulder, target, a: float, b: float, pole) -> np.ndarray:
    """Elbow positions for a two-bone chain reaching ``target`` with the elbow bent toward ``pole``."""
    diff = target - shoulder
    d = np.linalg.norm(diff, axis=-1, keepdims=True)
    if np.any(d >= a + b) or np.any(d <= abs(a - b)):
        raise ValueError("IK target out of reach")
    u = diff / d
    x = (a * a - b * b + d * d) / (2 * d)
    r = np.sqrt(a * a - x * x)
    w = _unit(pole - np.sum(pole * u, axis=-1, keepdims=True) * u)
    return shoulder + x * u + r * w


def _hand_direction(elbow, wrist, angle_deg, ref):
    """Unit vector wrist->hand making ``angle_deg`` with wrist->elbow, bent toward ``ref``."""
    u = _unit(wrist - elbow)
    p = _unit(ref - np.sum(ref * u, axis=-1, keepdims=True) * u)
    bend = np.deg2rad(180.0 - np.asarray(angle_deg))[..., None]
    return np.cos(bend) * u + np.sin(bend) * p


@dataclass
class PoseSequence:
    positions: np.ndarray  # f x J x 3, mm
    fps: float = 30.0
    joint_names: tuple = JOINT_NAMES

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError(f"positions must be f x J x 3, got {self.positions.shape}")
        if self.positions.shape[1] != len(self.joint_names):
            raise ValueError("joint name count does not match positions")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite joint positions")

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    def joint(self, name: str) -> np.ndarray:
        return self.positions[:, self.joint_names.index(name)]

    def velocity(self, dt: float | None = None) -> np.ndarray:
        return central_diff(self.positions, 1.0 / self.fps if dt is None else dt, axis=0)

    def acceleration(self, dt: float | None = None) -> np.ndarray:
        dt = 1.0 / self.fps if dt is None else dt
        return central_diff(central_diff(self.positions, dt, axis=0), dt, axis=0)

    def bone_lengths(self) -> np.ndarray:
        idx = {n: i for i, n in enumerate(self.joint_names)}
        cols = [np.linalg.norm(self.positions[:, idx[JOINT_NAMES[a]]] - self.positions[:, idx[JOINT_NAMES[b]]], axis=-1)
                for a, b in BONES if JOINT_NAMES[a] in idx and JOINT_NAMES[b] in idx]
        return np.stack(cols, axis=1)

    def root(self) -> np.ndarray:
        return 0.5 * (self.joint("L_shoulder") + self.joint("R_shoulder"))


def render_pose(script: PerformanceScript, skeleton: Skeleton | None = None) -> PoseSequence:
    sk = skeleton or Skeleton.for_participant(script.participant)
    t = script.frame_times()
    f = len(t)
    root = np.asarray(sk.root, dtype=np.float64)
    s = sk.upper_arm / 300.0
    ones = np.ones((f, 1))
    l_sh = ones * (root + [sk.shoulder_half, 0, 0])
    r_sh = ones * (root + [-sk.shoulder_half, 0, 0])

    # right arm: wrist rides the bow axis
    pos, perp, _ = bow_kinematics(script, t)
    contact = root + s * np.array([-120.0, -170.0, 330.0])
    r_wr = contact + pos[:, None] * _BOW_AXIS + perp[:, None] * _BOW_NORMAL
    r_el = two_link_ik(r_sh, r_wr, sk.upper_arm, sk.forearm, np.array([-1.0, -1.0, -0.3]))
    r_hd = r_wr + sk.hand * _hand_direction(r_el, r_wr, np.full(f, 170.0), np.array([0.0, -1.0, 0.0]))

    # left arm: the hand sits on the neck, vibrato slides it along the neck axis
    hand_base = root + s * np.array([230.0, -40.0, 440.0])
    l_hd = hand_base + vibrato_displacement(script, t)[:, None] * _NECK_AXIS
    angle = script.hold_angle(t)
    up = np.array([0.0, 1.0, 0.0])
    d = np.broadcast_to(_NECK_AXIS, (f, 3))
    for _ in range(60):
        l_wr = l_hd - sk.hand * d
        l_el = two_link_ik(l_sh, l_wr, sk.upper_arm, sk.forearm, np.array([0.3, -1.0, 0.0]))
        nd = _hand_direction(l_el, l_wr, angle, up)
        if np.max(np.abs(nd - d)) < 1e-13:
            break
        d = nd
    l_wr = l_hd - sk.hand * d
    l_el = two_link_ik(l_sh, l_wr, sk.upper_arm, sk.forearm, np.array([0.3, -1.0, 0.0]))

    P = np.stack([l_sh, r_sh, l_el, r_el, l_wr, r_wr, l_hd, r_hd], axis=1)
    return PoseSequence(P, script.fps)


def hold_angles(elbow, wrist, hand) -> np.ndarray:
    """Interior wrist angle (degrees) between wrist->elbow and wrist->hand; NaN for zero-length bones."""
    a = np.asarray(elbow) - wrist
    b = np.asarray(hand) - wrist
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    ok = (na > 1e-12) & (nb > 1e-12)
    c = np.full(na.shape, np.nan)
    c[ok] = np.sum(a[ok] * b[ok], axis=-1) / (na[ok] * nb[ok])
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


# ------------------------------------------------------------------ camera

@dataclass
class Camera:
    width: int = 1280
    height: int = 720
    focal: float = 900.0
    position: tuple = (0.0, -100.0, 3000.0)  # looks down -z

    def project(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        rel = p - np.asarray(self.position)
        depth = -rel[..., 2]
        if np.any(depth <= 0):
            raise ValueError("joint behind camera")
        u = self.width / 2 + self.focal * rel[..., 0] / depth
        v = self.height / 2 - self.focal * rel[..., 1] / depth
        return np.stack([u, v], axis=-1)


@dataclass
class Keypoints2D:
    points: np.ndarray  # f x J x 2, px
    camera: Camera = field(default_factory=Camera)
    noise_sigma: float = 2.0
    occluded: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite keypoints")


def project_2d(pose: PoseSequence, camera: Camera | None = None, noise_sigma_px: float = 2.0,
               occlusion_rate: float = 0.0, seed: int = 0) -> Keypoints2D:
    cam = camera or Camera()
    rng = np.random.default_rng([seed, 2])
    uv = cam.project(pose.positions)
    if noise_sigma_px > 0:
        uv = uv + rng.normal(scale=noise_sigma_px, size=uv.shape)
    occ = np.zeros(uv.shape[:2], dtype=bool)
    if occlusion_rate > 0:
        occ = rng.random(uv.shape[:2]) < occlusion_rate
        occ[0] = False
        for k in range(1, len(uv)):
            uv[k, occ[k]] = uv[k - 1, occ[k]]
    uv[..., 0] = np.clip(uv[..., 0], 0, cam.width - 1)
    uv[..., 1] = np.clip(uv[..., 1], 0, cam.height - 1)
    return Keypoints2D(uv, cam, noise_sigma_px, occ)


# ------------------------------------------------------------------- audio

def midi_to_hz(m):
    return 440.0 * 2.0 ** ((np.asarray(m, dtype=np.float64) - 69.0) / 12.0)


def synth_audio(script: PerformanceScript, sample_rate: int = 16000, gain: float = 5e-5,
                noise: float = 1.0) -> AudioClip:
    """Bowed-string stand-in: a band-limited sawtooth whose loudness follows |bow speed|.

    Vibrato bends pitch by up to a quarter tone and adds phase-locked amplitude
    modulation.  Bow noise scales with speed and the level stays low, so the
    log-flux onset envelope follows loudness itself rather than its slope.
    """
    n = int(round(script.duration * sample_rate))
    t = np.arange(n) / sample_rate
    _, _, speed = bow_kinematics(script, t)
    amp = gain * np.abs(speed)
    f0 = np.full(n, midi_to_hz(69.0))
    for s in script.strokes:
        f0[(t >= s.start) & (t < s.end)] = midi_to_hz(s.pitch)
    vib = vibrato_displacement(script, t) / 10.0
    f0 = f0 * 2.0 ** (VIBRATO_DEPTH_SEMITONES / 12.0 * vib)
    amp = amp * (1.0 + VIBRATO_AM * vib)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    n_harm = max(1, min(10, int(0.45 * sample_rate / f0.max())))
    wave = sum(np.sin(k * phase) / k for k in range(1, n_harm + 1)) * (2 / np.pi)
    rng = np.random.default_rng([script.seed, 3, STYLES.index(script.style)])
    x = amp * (wave + noise * rng.normal(size=n))
    x = np.clip(x, -1.0, 1.0).astype(np.float32).astype(np.float64)
    return AudioClip(x, sample_rate)


# ----------------------------------------------------------------- samples

@dataclass
class Sample:
    pose: PoseSequence
    kp2d: Keypoints2D
    audio: AudioClip
    meta: dict


def events_meta(script: PerformanceScript, offset_s: float = 0.0, span_s: float | None = None) -> dict:
    """Ground-truth events, re-based to a window starting ``offset_s`` into the clip."""
    span = script.duration - offset_s if span_s is None else span_s

    def window(ts):
        ts = np.asarray(ts) - offset_s
        return [float(x) for x in ts[(ts >= 0) & (ts < span)]]

    strokes = []
    for s in script.strokes:
        a, b = s.start - offset_s, s.end - offset_s
        if b > 0 and a < span:
            strokes.append({"start": max(a, 0.0), "end": min(b, span), "straight": s.straight,
                            "complete": a >= 0 and b <= span + 1e-9})
    t = np.arange(int(round(span * script.fps))) / script.fps + offset_s
    return {
        "bow_changes": window(script.bow_change_times()),
        "vibrato_events": window(script.vibrato_event_times()),
        "vibrato_segments": [[max(v.start - offset_s, 0.0), min(v.end - offset_s, span)]
                             for v in script.vibratos if v.end > offset_s and v.start < offset_s + span],
        "strokes": strokes,
        "hold_angles": [float(a) for a in script.hold_angle(t)],
    }


def make_sample(script: PerformanceScript, sample_rate: int = 16000, noise_sigma_px: float = 2.0,
                occlusion_rate: float = 0.0, camera: Camera | None = None) -> Sample:
    pose = render_pose(script)
    kp = project_2d(pose, camera, noise_sigma_px, occlusion_rate, seed=script.seed)
    audio = synth_audio(script, sample_rate)
    meta = {
        "fps": script.fps, "frames": pose.n_frames, "J": len(JOINT_NAMES), "joint_names": list(JOINT_NAMES),
        "duration_s": script.duration, "sample_rate": sample_rate, "seed": script.seed,
        "participant": script.participant, "style": script.style, "split": None,
        "clip_id": f"p{script.participant}_s{script.seed}", "start_frame": 0,
        "camera": asdict(kp.camera), "noise_sigma_px": noise_sigma_px,
        "events": events_meta(script),
    }
    return Sample(pose, kp, audio, meta)


def slice_sample(sample: Sample, script: PerformanceScript, start_frame: int, n_frames: int) -> Sample:
    """Window of ``n_frames`` starting at ``start_frame`` with events re-based to the window."""
    if start_frame < 0 or start_frame + n_frames > sample.pose.n_frames:
        raise ValueError("window outside the clip")
    fps, sr = sample.pose.fps, sample.audio.sample_rate
    a0 = int(round(start_frame / fps * sr))
    na = int(round(n_frames / fps * sr))
    meta = dict(sample.meta)
    meta.update(frames=n_frames, duration_s=n_frames / fps, start_frame=start_frame,
                events=events_meta(script, start_frame / fps, n_frames / fps))
    kp = Keypoints2D(sample.kp2d.points[start_frame:start_frame + n_frames], sample.kp2d.camera,
                     sample.kp2d.noise_sigma,
                     None if sample.kp2d.occluded is None else sample.kp2d.occluded[start_frame:start_frame + n_frames])
    return Sample(PoseSequence(sample.pose.positions[start_frame:start_frame + n_frames], fps),
                  kp, AudioClip(sample.audio.samples[a0:a0 + na], sr), meta)


def _write_array(path: Path, arr: np.ndarray) -> None:
    f, j = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(POSE_MAGIC + struct.pack("<II", f, j))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(path: Path, channels: int) -> np.ndarray:
    if not path.exists():
        raise FormatError(f"{path.name}: missing")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != POSE_MAGIC:
        raise FormatError(f"{path.name}: bad header")
    f, j = struct.unpack("<II", raw[4:12])
    want = 12 + 4 * f * j * channels
    if len(raw) != want:
        raise FormatError(f"{path.name}: expected {want} bytes for {f}x{j}x{channels}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(f, j, channels).astype(np.float64)


def write_sample(directory, sample: Sample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_array(d / "pose3d.bin", sample.pose.positions)
    _write_array(d / "kp2d.bin", sample.kp2d.points)
    write_wav(d / "audio.wav", sample.audio)
    (d / "meta.json").write_text(json.dumps(sample.meta, indent=1, sort_keys=True))


def read_sample(directory) -> Sample:
    d = Path(directory)
    if not (d / "meta.json").exists():
        raise FormatError("meta.json: missing")
    try:
        meta = json.loads((d / "meta.json").read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"meta.json: {e}") from None
    pose = _read_array(d / "pose3d.bin", 3)
    kp = _read_array(d / "kp2d.bin", 2)
    if not (d / "audio.wav").exists():
        raise FormatError("audio.wav: missing")
    audio = read_wav(d / "audio.wav")

    f = len(pose)
    if f != meta["frames"] or f != int(round(meta["duration_s"] * meta["fps"])):
        raise ValidationError(f"pose3d.bin has {f} frames but meta says {meta['frames']} at {meta['fps']} fps "
                              f"over {meta['duration_s']} s")
    if kp.shape[:2] != pose.shape[:2]:
        raise ValidationError(f"kp2d.bin shape {kp.shape[:2]} differs from pose3d.bin {pose.shape[:2]}")
    if len(meta["joint_names"]) != pose.shape[1]:
        raise ValidationError("joint_names length differs from pose3d.bin J")
    if audio.sample_rate != meta["sample_rate"] or len(audio.samples) != int(round(meta["duration_s"] * audio.sample_rate)):
        raise ValidationError("audio.wav length or rate disagrees with meta")
    cam = Camera(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["camera"].items()})
    return Sample(PoseSequence(pose, meta["fps"], tuple(meta["joint_names"])),
                  Keypoints2D(kp, cam, meta.get("noise_sigma_px", 0.0)), audio, meta)
