"""Violin-performance analysis on pose trajectories: bow-direction changes,
straight-bow check, violin hold (left-wrist flexion) and vibrato cycles,
each scored against simulator ground truth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt

from .violinsim import hold_angles

BOW_WINDOW_S = 0.1
STRAIGHT_MM = 15.0
HOLD_TOL_DEG = 10.0
VIBRATO_BAND_HZ = (4.0, 9.0)
BOW_CUTOFF_HZ = 5.0
MIN_STROKE_FRAMES = 5
EVENT_KINDS = ("bow-change", "vibrato-cycle")
TABLE_COLUMNS = (("bow_dir_pct", "Bow Dir (%)"), ("straight_bow_pct", "Straight Bow (%)"),
                 ("violin_hold_pct", "Violin Hold (%)"), ("vibrato_pct", "Vibrato (%)"))


@dataclass
class EventList:
    times: np.ndarray  # seconds, strictly increasing
    kind: str = "bow-change"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")

    def __len__(self):
        return len(self.times)


# ------------------------------------------------------------------ filters

def _butter_filtfilt(x: np.ndarray, fps: float, wn, btype: str) -> np.ndarray:
    b, a = butter(2, wn, btype=btype, fs=fps)
    x = np.asarray(x, dtype=np.float64)
    padlen = min(3 * max(len(a), len(b)), x.shape[0] - 1)
    return filtfilt(b, a, x, axis=0, padlen=padlen)


def lowpass(traj, fps: float, cutoff_hz: float) -> np.ndarray:
    """Second-order Butterworth run forward and backward (zero phase) along frames."""
    if not 0 < cutoff_hz < fps / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, {fps / 2}) Hz for {fps} fps")
    return _butter_filtfilt(traj, fps, cutoff_hz, "lowpass")


def bandpass(traj, fps: float, lo_hz: float, hi_hz: float) -> np.ndarray:
    if not 0 < lo_hz < hi_hz < fps / 2:
        raise ValueError(f"band {lo_hz}-{hi_hz} Hz must lie inside (0, {fps / 2}) Hz")
    return _butter_filtfilt(traj, fps, (lo_hz, hi_hz), "bandpass")


def principal_axis(traj) -> np.ndarray:
    X = np.asarray(traj, dtype=np.float64)
    X = X - X.mean(axis=0)
    return np.linalg.svd(X, full_matrices=False)[2][0]


def direction_changes(x, fps: float, rel_threshold: float = 0.1, abs_threshold: float = 1.0) -> np.ndarray:
    """Times where the velocity of a 1-D series reverses.

    A reversal counts only once the velocity has exceeded the threshold with
    one sign and then with the other (hysteresis), which ignores jitter around
    rest.  The event is reported at the frame nearest the last linearly
    interpolated zero crossing inside that swing, so events live on the frame
    grid.  Thresholds are in units of x per second.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.gradient(x) * fps
    thr = max(rel_threshold * float(np.abs(v).max(initial=0.0)), abs_threshold)
    times = []
    state = 0
    last_cross = None
    for i in range(len(v)):
        if i > 0 and v[i - 1] != v[i] and (v[i - 1] <= 0 < v[i] or v[i - 1] >= 0 > v[i]):
            last_cross = round(i - 1 + v[i - 1] / (v[i - 1] - v[i])) / fps
        if v[i] > thr or v[i] < -thr:
            s = 1 if v[i] > 0 else -1
            if state and s != state and last_cross is not None:
                times.append(last_cross)
            state = s
            last_cross = None
    return np.array(times)


# -------------------------------------------------------------- bow changes

def segment_bow_changes(right_wrist, fps: float, cutoff_hz: float = BOW_CUTOFF_HZ) -> EventList:
    """Bow-direction changes from the right-wrist trajectory [f, 3]."""
    rw = np.asarray(right_wrist, dtype=np.float64)
    if rw.ndim != 2 or rw.shape[1] != 3:
        raise ValueError(f"segment_bow_changes: expected [f, 3], got {rw.shape}")
    if rw.shape[0] < 3 * fps:
        raise ValueError(f"segment_bow_changes needs at least {3 * fps:g} frames, got {rw.shape[0]}")
    smooth = lowpass(rw, fps, cutoff_hz)
    if np.ptp(smooth, axis=0).max() < 1.0:
        return EventList([], "bow-change")
    proj = (smooth - smooth.mean(axis=0)) @ principal_axis(smooth)
    return EventList(direction_changes(proj, fps, abs_threshold=5.0), "bow-change")


def match_events(pred: EventList, gt: EventList, window_s: float) -> int:
    """Greedy one-to-one matching, closest pairs first; returns the number of matches."""
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    p, g = np.asarray(pred.times), np.asarray(gt.times)
    if not len(p) or not len(g):
        return 0
    d = np.abs(p[:, None] - g[None, :])
    ii, jj = np.nonzero(d <= window_s + 1e-9)
    order = np.argsort(d[ii, jj], kind="stable")
    used_p, used_g = set(), set()
    for k in order:
        i, j = int(ii[k]), int(jj[k])
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
    return len(used_p)


def f1_percent(tp: int, n_pred: int, n_gt: int) -> float:
    """F1 x 100; nothing predicted and nothing to find counts as perfect."""
    if n_pred == 0 and n_gt == 0:
        return 100.0
    if tp == 0:
        return 0.0
    precision, recall = tp / n_pred, tp / n_gt
    return 100.0 * 2 * precision * recall / (precision + recall)


def score_events(pred: EventList, gt: EventList, window_s: float) -> float:
    return f1_percent(match_events(pred, gt, window_s), len(pred), len(gt))


# ------------------------------------------------------------ straight bow

def line_deviation(points) -> float:
    """Largest perpendicular distance from the least-squares 3-D line through the points."""
    X = np.asarray(points, dtype=np.float64)
    X0 = X - X.mean(axis=0)
    u = principal_axis(X)
    return float(np.linalg.norm(X0 - np.outer(X0 @ u, u), axis=1).max())


def classify_strokes(right_wrist, segments, threshold_mm: float = STRAIGHT_MM) -> list:
    """True (straight), False (curved) or None (shorter than 5 frames) per (start, end) frame segment."""
    rw = np.asarray(right_wrist, dtype=np.float64)
    out = []
    for a, b in segments:
        a, b = max(int(a), 0), min(int(b), len(rw) - 1)
        if b - a + 1 < MIN_STROKE_FRAMES:
            out.append(None)
        else:
            out.append(line_deviation(rw[a:b + 1]) < threshold_mm)
    return out


def straight_bow_counts(pred_rw, gt_rw, segments, threshold_mm: float = STRAIGHT_MM) -> tuple[int, int]:
    p = classify_strokes(pred_rw, segments, threshold_mm)
    g = classify_strokes(gt_rw, segments, threshold_mm)
    pairs = [(x, y) for x, y in zip(p, g) if x is not None and y is not None]
    return sum(x == y for x, y in pairs), len(pairs)


def straight_bow_score(pred_rw, gt_rw, segments, threshold_mm: float = STRAIGHT_MM) -> float:
    """% of strokes whose straight/curved class on the prediction matches the ground truth."""
    agree, n = straight_bow_counts(pred_rw, gt_rw, segments, threshold_mm)
    if n == 0:
        raise ValueError("straight_bow_score: no stroke of at least 5 frames")
    return 100.0 * agree / n


# -------------------------------------------------------------- violin hold

@dataclass
class HoldResult:
    angles: np.ndarray  # predicted angle per frame, degrees (NaN where undefined)
    l1_deg: float
    pct_within: float
    n_frames: int
    n_within: int


def violin_hold_flexion(pred_elbow, pred_wrist, pred_hand, gt_elbow, gt_wrist, gt_hand,
                        tol_deg: float = HOLD_TOL_DEG) -> HoldResult:
    pa = hold_angles(pred_elbow, pred_wrist, pred_hand)
    ga = hold_angles(gt_elbow, gt_wrist, gt_hand)
    ok = np.isfinite(pa) & np.isfinite(ga)
    if not ok.any():
        raise ValueError("violin_hold_flexion: no frame with non-zero bone vectors")
    err = np.abs(pa[ok] - ga[ok])
    within = int(np.sum(err <= tol_deg))
    return HoldResult(pa, float(err.mean()), 100.0 * within / len(err), len(err), within)


# ------------------------------------------------------------------ vibrato

def vibrato_signal(left_wrist, left_hand, fps: float, band=VIBRATO_BAND_HZ) -> np.ndarray:
    """Band-passed midpoint of wrist and hand projected on its principal axis."""
    if fps < 2 * band[1]:
        raise ValueError("vibrato unobservable at this frame rate")
    mid = 0.5 * (np.asarray(left_wrist, dtype=np.float64) + np.asarray(left_hand, dtype=np.float64))
    bp = bandpass(mid, fps, *band)
    if np.abs(bp).max(initial=0.0) == 0.0:
        return np.zeros(len(bp))
    return bp @ principal_axis(bp)


def detect_vibrato(left_wrist, left_hand, fps: float, band=VIBRATO_BAND_HZ) -> EventList:
    """Vibrato direction-change events (two per cycle)."""
    sig = vibrato_signal(left_wrist, left_hand, fps, band)
    return EventList(direction_changes(sig, fps, rel_threshold=0.2, abs_threshold=1.0), "vibrato-cycle")


# ------------------------------------------------------------------- scores

@dataclass
class TaskCounts:
    """Pooled counts so clip results can be summed before scoring."""

    bow_tp: int = 0
    bow_pred: int = 0
    bow_gt: int = 0
    straight_agree: int = 0
    straight_n: int = 0
    hold_within: int = 0
    hold_n: int = 0
    hold_l1_sum: float = 0.0
    vib_tp: int = 0
    vib_pred: int = 0
    vib_gt: int = 0
    notices: list = field(default_factory=list)

    def __add__(self, other: "TaskCounts") -> "TaskCounts":
        out = TaskCounts()
        for k in asdict(self):
            setattr(out, k, getattr(self, k) + getattr(other, k))
        return out

    def scores(self) -> "TaskScores":
        return TaskScores(
            bow_dir_pct=f1_percent(self.bow_tp, self.bow_pred, self.bow_gt) if self.bow_gt or self.bow_pred else None,
            straight_bow_pct=100.0 * self.straight_agree / self.straight_n if self.straight_n else None,
            violin_hold_pct=100.0 * self.hold_within / self.hold_n if self.hold_n else None,
            vibrato_pct=f1_percent(self.vib_tp, self.vib_pred, self.vib_gt) if self.vib_gt else None,
            hold_l1_deg=self.hold_l1_sum / self.hold_n if self.hold_n else None,
            notices=list(self.notices),
        )


@dataclass
class TaskScores:
    bow_dir_pct: float | None = None
    straight_bow_pct: float | None = None
    violin_hold_pct: float | None = None
    vibrato_pct: float | None = None
    hold_l1_deg: float | None = None
    notices: list = field(default_factory=list)

    def __post_init__(self):
        for k, _ in TABLE_COLUMNS:
            v = getattr(self, k)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{k} = {v} outside [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def format_table(rows: dict) -> str:
    """Text table, one row per named TaskScores."""
    head = ["Model"] + [title for _, title in TABLE_COLUMNS]
    body = [[name] + ["-" if getattr(s, k) is None else f"{getattr(s, k):.2f}" for k, _ in TABLE_COLUMNS]
            for name, s in rows.items()]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: " | ".join(c.ljust(w) for c, w in zip(r, widths))  # noqa: E731
    return "\n".join([fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(r) for r in body])


def analyze_clip(pred, gt, joints, fps: float, events: dict) -> TaskCounts:
    """All four tasks on one clip; ``pred``/``gt`` are [f, J, 3], ``events`` the clip's ground truth."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    idx = {n: i for i, n in enumerate(joints)}
    c = TaskCounts()
    f = len(gt)
    if "R_wrist" in idx and f >= 3 * fps:
        gt_bc = EventList(events.get("bow_changes", []), "bow-change")
        pb = segment_bow_changes(pred[:, idx["R_wrist"]], fps)
        c.bow_tp, c.bow_pred, c.bow_gt = match_events(pb, gt_bc, BOW_WINDOW_S), len(pb), len(gt_bc)
        segs = [(int(round(s["start"] * fps)), int(round(s["end"] * fps)))
                for s in events.get("strokes", []) if s.get("complete", True)]
        if segs:
            c.straight_agree, c.straight_n = straight_bow_counts(pred[:, idx["R_wrist"]], gt[:, idx["R_wrist"]], segs)
        else:
            c.notices.append("straight bow: no complete stroke")
    else:
        c.notices.append("bow tasks: needs R_wrist and at least 3 s of frames")
    if all(j in idx for j in ("L_elbow", "L_wrist", "L_hand")):
        h = violin_hold_flexion(*(pred[:, idx[j]] for j in ("L_elbow", "L_wrist", "L_hand")),
                                *(gt[:, idx[j]] for j in ("L_elbow", "L_wrist", "L_hand")))
        c.hold_n = h.n_frames
        c.hold_within = h.n_within
        c.hold_l1_sum = h.l1_deg * h.n_frames
    else:
        c.notices.append("violin hold: needs L_elbow, L_wrist and L_hand")
    if "vibrato_events" in events and all(j in idx for j in ("L_wrist", "L_hand")):
        gt_v = EventList(events["vibrato_events"], "vibrato-cycle")
        pv = detect_vibrato(pred[:, idx["L_wrist"]], pred[:, idx["L_hand"]], fps)
        c.vib_tp, c.vib_pred, c.vib_gt = match_events(pv, gt_v, 1.0 / fps), len(pv), len(gt_v)
    else:
        c.notices.append("vibrato: missing ground-truth events or left-hand joints")
    return c
