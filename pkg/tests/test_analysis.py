import json

import numpy as np
import pytest

from viopose.analysis import (
    EventList, TaskCounts, TaskScores, analyze_clip, classify_strokes, detect_vibrato, format_table, lowpass,
    match_events, score_events, segment_bow_changes, straight_bow_score, violin_hold_flexion,
)
from viopose.violinsim import (
    JOINT_INDEX, JOINT_NAMES, PerformanceScript, Stroke, VibratoSegment, events_meta, generate_script, render_pose,
)

FPS = 30.0


def script_with(strokes, vibratos=(), duration=None, hold=160.0):
    duration = duration or max(s.end for s in strokes)
    return PerformanceScript(duration=duration, fps=FPS, strokes=list(strokes), vibratos=list(vibratos),
                             hold_times=[0.0], hold_angles=[hold], bow_start=-150.0, seed=0, participant=0,
                             style="exercise")


def alternating(seconds, straight=True):
    return [Stroke(float(k), float(k + 1), 1 if k % 2 == 0 else -1, 150.0, straight=straight) for k in range(seconds)]


def rw(pose):
    return pose.positions[:, JOINT_INDEX["R_wrist"]]


# ------------------------------------------------------------------ filters

def test_lowpass_dc_and_attenuation():
    t = np.arange(300) / FPS
    dc = np.full((300, 3), 7.5)
    np.testing.assert_allclose(lowpass(dc, FPS, 5.0), dc, atol=1e-9)
    x = np.sin(2 * np.pi * 1 * t) + np.sin(2 * np.pi * 14 * t)
    y = lowpass(x[:, None], FPS, 5.0)[:, 0]
    spec_in, spec_out = np.abs(np.fft.rfft(x)), np.abs(np.fft.rfft(y))
    k14 = int(round(14 * len(t) / FPS))
    assert 20 * np.log10(spec_in[k14] / spec_out[k14]) > 20


def test_lowpass_zero_phase():
    t = np.arange(300) / FPS
    x = np.sin(2 * np.pi * t)
    y = lowpass(x[:, None], FPS, 5.0)[:, 0]
    lags = np.arange(-5, 6)
    xc = [np.dot(x[60:240], np.roll(y, -k)[60:240]) for k in lags]
    assert abs(lags[int(np.argmax(xc))]) < 1


def test_lowpass_rejects_cutoff_at_nyquist():
    with pytest.raises(ValueError):
        lowpass(np.zeros((50, 3)), FPS, 15.0)


# -------------------------------------------------------------- bow changes

def test_bow_changes_at_turnarounds():
    s = script_with(alternating(10))
    ev = segment_bow_changes(rw(render_pose(s)), FPS)
    gt = s.bow_change_times()
    assert len(ev) == len(gt) == 9
    np.testing.assert_allclose(ev.times, gt, atol=0.1)


def test_bow_changes_static_and_monotone():
    static = np.tile([10.0, 20.0, 30.0], (120, 1))
    assert len(segment_bow_changes(static, FPS)) == 0
    one = script_with([Stroke(0.0, 4.0, 1, 300.0)])
    assert len(segment_bow_changes(rw(render_pose(one)), FPS)) == 0


def test_bow_changes_need_three_seconds():
    with pytest.raises(ValueError, match="frames"):
        segment_bow_changes(np.zeros((60, 3)), FPS)


def test_time_shift_moves_events_by_whole_frames():
    s = generate_script(3, 20.0, style="piece", participant=1)
    pose = render_pose(s)
    k = 7
    full = segment_bow_changes(rw(pose), FPS).times
    cut = segment_bow_changes(rw(pose)[k:], FPS).times + k / FPS
    inner = lambda t: t[(t > 2.0) & (t < 18.0)]  # noqa: E731  away from filter start-up at both ends
    np.testing.assert_allclose(inner(cut), inner(full), atol=1e-6)
    lw, lh = pose.positions[:, JOINT_INDEX["L_wrist"]], pose.positions[:, JOINT_INDEX["L_hand"]]
    vf = detect_vibrato(lw, lh, FPS).times
    vc = detect_vibrato(lw[k:], lh[k:], FPS).times + k / FPS
    assert len(inner(vf)) > 10
    np.testing.assert_allclose(inner(vc), inner(vf), atol=1e-6)


# ------------------------------------------------------------------ scoring

def test_score_events_examples():
    gt = EventList([1.0, 2.0, 3.0])
    assert score_events(gt, gt, 0.1) == 100.0
    assert score_events(EventList([]), gt, 0.1) == 0.0
    # 2 of 2 predictions match 3 ground-truth events: F1 = 2 * 1 * (2/3) / (1 + 2/3)
    assert score_events(EventList([1.05, 2.95]), gt, 0.1) == pytest.approx(80.0, abs=1e-12)


def test_matching_is_one_to_one_and_greedy():
    gt = EventList([1.0, 1.08])
    pred = EventList([1.05])
    assert match_events(pred, gt, 0.1) == 1
    # the closest pair wins: 1.07 takes 1.08, leaving 1.0 for 0.95
    assert match_events(EventList([0.95, 1.07]), gt, 0.1) == 2
    with pytest.raises(ValueError):
        match_events(pred, gt, 0.0)
    with pytest.raises(ValueError):
        EventList([2.0, 1.0])


# ------------------------------------------------------------ straight bow

def test_straight_bow_linear_and_curved():
    strokes = alternating(6)
    strokes[2] = Stroke(2.0, 3.0, 1, 150.0, straight=False)
    s = script_with(strokes)
    pose = rw(render_pose(s))
    segs = [(int(round(st.start * FPS)), int(round(st.end * FPS))) for st in s.strokes]
    cls = classify_strokes(pose, segs)
    assert cls == [True, True, False, True, True, True]
    assert straight_bow_score(pose, pose, segs) == 100.0
    # a prediction that straightens the curved stroke disagrees on exactly that one
    flat = pose.copy()
    a, b = segs[2]
    ends = np.linspace(0, 1, b - a + 1)[:, None]
    flat[a:b + 1] = pose[a] + ends * (pose[b] - pose[a])
    assert straight_bow_score(flat, pose, segs) == pytest.approx(500 / 6)
    assert classify_strokes(pose, [(0, 3)]) == [None]


# -------------------------------------------------------------- violin hold

def test_hold_identity_and_collinear():
    rng = np.random.default_rng(0)
    e, w, h = rng.normal(size=(3, 20, 3))
    r = violin_hold_flexion(e, w, h, e, w, h)
    assert r.l1_deg == 0.0 and r.pct_within == 100.0
    line = violin_hold_flexion(np.zeros((1, 3)), np.ones((1, 3)), 2 * np.ones((1, 3)),
                               np.zeros((1, 3)), np.ones((1, 3)), 2 * np.ones((1, 3)))
    assert line.angles[0] == pytest.approx(180.0, abs=1e-9)


def test_hold_rotated_hand_gives_ten_degrees():
    e = np.array([[0.0, 0, 0], [0, 0, 0]])
    w = np.array([[100.0, 0, 0], [100, 0, 0]])
    h = np.array([[100.0, 80, 0], [100, 80, 0]])
    th = np.radians(10)
    rot = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1]])
    hp = h.copy()
    hp[1] = w[1] + rot @ (h[1] - w[1])
    r = violin_hold_flexion(e, w, hp, e, w, h)
    gt_angles = violin_hold_flexion(e, w, h, e, w, h).angles
    np.testing.assert_allclose(np.abs(r.angles - gt_angles), [0.0, 10.0], atol=1e-9)
    assert r.l1_deg == pytest.approx(5.0, abs=1e-9)
    assert r.pct_within == 100.0


def test_hold_skips_zero_length_bones():
    e = np.zeros((2, 3))
    w = np.array([[0.0, 0, 0], [1, 0, 0]])
    h = np.array([[1.0, 0, 0], [1, 1, 0]])
    r = violin_hold_flexion(e, w, h, e, w, h)
    assert r.n_frames == 1 and np.isnan(r.angles[0])


# ------------------------------------------------------------------ vibrato

def test_vibrato_six_hz():
    s = script_with(alternating(6), [VibratoSegment(1.0, 5.0, 6.0, 10.0)])
    pose = render_pose(s)
    lw, lh = pose.positions[:, JOINT_INDEX["L_wrist"]], pose.positions[:, JOINT_INDEX["L_hand"]]
    ev = detect_vibrato(lw, lh, FPS)
    gt = EventList(s.vibrato_event_times(), "vibrato-cycle")
    assert len(gt) == 48  # 12 per second over 4 s
    assert abs(len(ev) - 48) <= 1
    assert score_events(ev, gt, 1 / FPS) > 95


def test_no_vibrato_no_events():
    pose = render_pose(script_with(alternating(6)))
    lw, lh = pose.positions[:, JOINT_INDEX["L_wrist"]], pose.positions[:, JOINT_INDEX["L_hand"]]
    assert len(detect_vibrato(lw, lh, FPS)) == 0


def test_vibrato_below_noise_degrades():
    s = script_with(alternating(6), [VibratoSegment(1.0, 5.0, 6.0, 0.1)])
    pose = render_pose(s)
    rng = np.random.default_rng(1)
    noisy = pose.positions + rng.normal(scale=2.0, size=pose.positions.shape)
    gt = EventList(s.vibrato_event_times(), "vibrato-cycle")
    clean = score_events(detect_vibrato(pose.positions[:, 4], pose.positions[:, 6], FPS), gt, 1 / FPS)
    dirty = score_events(detect_vibrato(noisy[:, 4], noisy[:, 6], FPS), gt, 1 / FPS)
    assert 0 <= dirty < clean


def test_vibrato_needs_frame_rate():
    with pytest.raises(ValueError, match="vibrato unobservable at this frame rate"):
        detect_vibrato(np.zeros((100, 3)), np.zeros((100, 3)), 15.0)


# ---------------------------------------------------- clips and invariants

@pytest.mark.parametrize("style", ["piece", "vibrato"])
def test_ground_truth_poses_reproduce_events(style):
    c = TaskCounts()
    for seed in range(3):
        s = generate_script(seed, 20.0, style=style, participant=seed)
        p = render_pose(s).positions
        c = c + analyze_clip(p, p, JOINT_NAMES, FPS, events_meta(s))
    sc = c.scores()
    assert sc.bow_dir_pct >= 95 and sc.vibrato_pct >= 95
    assert sc.straight_bow_pct == 100.0 and sc.violin_hold_pct == 100.0


def test_translation_leaves_tasks_unchanged():
    s = generate_script(5, 20.0, style="piece", participant=2)
    p = render_pose(s).positions
    ev = events_meta(s)
    moved = p + np.array([250.0, -40.0, 900.0])
    a = analyze_clip(p, p, JOINT_NAMES, FPS, ev)
    b = analyze_clip(moved, p + 0.0, JOINT_NAMES, FPS, ev)
    b_all = analyze_clip(moved, moved, JOINT_NAMES, FPS, ev)
    assert a == b_all
    for k in ("bow_tp", "bow_pred", "straight_agree", "vib_tp", "vib_pred"):
        assert getattr(a, k) == getattr(b, k)
    np.testing.assert_allclose(segment_bow_changes(moved[:, 5], FPS).times, segment_bow_changes(p[:, 5], FPS).times,
                               atol=1e-9)


def test_missing_joints_are_noticed():
    joints = ("R_wrist", "L_wrist")
    s = generate_script(0, 10.0, style="exercise")
    p = render_pose(s).positions[:, [JOINT_INDEX[j] for j in joints]]
    c = analyze_clip(p, p, joints, FPS, events_meta(s))
    sc = c.scores()
    assert sc.violin_hold_pct is None and sc.vibrato_pct is None
    assert any("violin hold" in n for n in sc.notices)


def test_task_scores_json_and_table():
    sc = TaskScores(90.0, 100.0, 75.5, 60.0, 3.2)
    d = json.loads(sc.to_json())
    assert d["bow_dir_pct"] == 90.0 and d["vibrato_pct"] == 60.0
    table = format_table({"audio": sc, "no audio": TaskScores(80.0, None, 70.0, 50.0)})
    head = table.splitlines()[0]
    for col in ("Bow Dir (%)", "Straight Bow (%)", "Violin Hold (%)", "Vibrato (%)"):
        assert col in head
    assert "no audio" in table and " - " in table
    with pytest.raises(ValueError):
        TaskScores(bow_dir_pct=101.0)
