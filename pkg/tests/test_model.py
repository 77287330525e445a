import time

import numpy as np
import pytest

from viopose.numcore import Tape, Tensor, grad_check
from viopose.numcore.gradcheck import check_parameters, numeric_grad, roundoff_floor, tape_grads
from viopose.model import (
    ModelConfig, VioPoseModel, bidirectional_mix, differentiate_time, identity_blocks, integrate_time,
    kalman_fuse, load_checkpoint, save_checkpoint,
)
from viopose.model.checkpoint import CheckpointError
from viopose.model.layers import interp_matrix

SMALL = dict(frames=12, audio_frames=40, d_model=16, heads=2, d_ff=32, n_pose_blocks=1, n_hier_blocks=2,
             joints=("R_wrist", "L_wrist", "L_hand"), conv_channels=(8, 6, 4))


def small(**kw):
    return ModelConfig(**{**SMALL, **kw})


def inputs(cfg, b=2, seed=0):
    rng = np.random.default_rng(seed)
    kp = rng.uniform(300, 900, (b, cfg.frames, cfg.n_joints, 2))
    fe = rng.normal(size=(b, cfg.audio_frames, 35))
    return kp, fe


@pytest.fixture(scope="module")
def default_model():
    return VioPoseModel(ModelConfig(), seed=0)


# ------------------------------------------------------------ encoders

def test_default_shapes_and_size(default_model):
    cfg = default_model.config
    kp, fe = inputs(cfg, b=1)
    e = default_model.embed_pose(kp)
    assert e.shape == (1, 90, 256)
    lat = default_model.encode_audio(fe)
    assert len(lat) == 3 and all(x.shape == (1, 90, 256) for x in lat)
    out = default_model(kp, fe)
    d = out.dynamics
    assert d.pose.shape == d.vel.shape == d.acc.shape == (1, 90, 8, 3)
    assert default_model.n_params() < 10_000_000


def test_pose_embedding_order_sensitive():
    m = VioPoseModel(small())
    kp, _ = inputs(m.config, b=1)
    perm = np.random.default_rng(1).permutation(m.config.frames)
    a = m.embed_pose(kp).data[0, perm]
    b = m.embed_pose(kp[:, perm]).data[0]
    assert not np.allclose(a, b)


def test_constant_latent_construction():
    m = VioPoseModel(small())
    identity_blocks(m)
    m.pose_pos.data[...] = 0.0
    w, h = m.config.image_size
    kp = np.broadcast_to([w / 2, h / 2], (2, m.config.frames, m.config.n_joints, 2))
    e = m.embed_pose(kp).data
    assert np.ptp(e, axis=1).max() == 0.0


def test_audio_silence_frame_constant():
    m = VioPoseModel(small())
    silence = np.zeros(35)
    silence[1] = np.log(1e-10) * np.sqrt(40)  # MFCC c0 of an all-floor log-mel frame
    m.buffers["audio_mean"] = silence.copy()
    m.audio_pos.data[...] = 0.0
    lat = m.encode_audio(np.broadcast_to(silence, (2, m.config.audio_frames, 35)))
    for x in lat:
        assert np.all(np.isfinite(x.data))
        assert np.ptp(x.data, axis=1).max() < 1e-12


def test_audio_resampling_error():
    m = VioPoseModel(small())
    with pytest.raises(ValueError, match="resample"):
        m.encode_audio(np.zeros((1, 5, 35)))


def test_interp_matrix():
    M = interp_matrix(5, 3)
    np.testing.assert_allclose(np.arange(5.0) @ M, [0, 2, 4])
    np.testing.assert_allclose(M.sum(axis=0), 1.0)


def test_fuse_shape_audio_half_and_grads():
    m = VioPoseModel(small())
    D = m.config.d_model
    rng = np.random.default_rng(2)
    ep, ea = Tensor(rng.normal(size=(2, 12, D))), Tensor(rng.normal(size=(2, 12, D)))
    out = m.fuse(ep, ea)
    assert out.shape == (2, 12, D)
    zero = m.fuse(ep, Tensor(np.zeros((2, 12, D)))).data
    W, b = m.fuse_lin.W.data, m.fuse_lin.b.data
    np.testing.assert_allclose(zero, np.maximum(ep.data @ W[:D] + b, 0))
    ep.requires_grad = ea.requires_grad = True
    with Tape() as tape:
        loss = m.fuse(ep, ea).sum()
    tape.backward(loss)
    assert np.abs(ep.grad).sum() > 0 and np.abs(ea.grad).sum() > 0
    with pytest.raises(ValueError):
        m.fuse(ep, Tensor(np.zeros((2, 11, D))))


# ----------------------------------------------------------- hierarchy

def test_hierarchy_identity_levels_share_latent():
    m = VioPoseModel(small())
    identity_blocks(m)
    D = m.config.d_model
    e_m = Tensor(np.random.default_rng(3).normal(size=(2, 12, D)))
    zero = [Tensor(np.zeros((2, 12, D)))] * m.config.n_hier_blocks
    h = m.hierarchy_latents(e_m, zero)
    # BN(x + BN(x)) == BN(x) per channel, so all levels coincide up to the BN epsilon
    np.testing.assert_allclose(h[1].data, h[3].data, atol=1e-4)
    np.testing.assert_allclose(h[2].data, h[3].data, atol=1e-4)
    acc, vel, pose = m.hierarchy_forward(e_m, zero)
    assert acc.shape == vel.shape == pose.shape == (2, 12, 3, 3)


@pytest.mark.parametrize("mode", ["no_cascade", "concat", "conditioning", "parallel"])
def test_hierarchy_variants_differ(mode):
    kp, fe = inputs(small())
    base = VioPoseModel(small(), seed=4)(kp, fe).dynamics.pose.data
    other = VioPoseModel(small(hierarchy=mode), seed=4)(kp, fe).dynamics.pose.data
    assert other.shape == base.shape
    assert not np.allclose(base, other)


def test_hierarchy_requires_latents():
    m = VioPoseModel(small())
    with pytest.raises(ValueError, match="audio latents"):
        m.hierarchy_latents(Tensor(np.zeros((1, 12, 16))), [])


def test_no_audio_runs_and_differs():
    kp, fe = inputs(small())
    a = VioPoseModel(small(), seed=5)(kp, fe)
    b = VioPoseModel(small(use_audio=False), seed=5)(kp, None)
    assert b.audio_pose is None and a.audio_pose is not None
    assert not np.allclose(a.dynamics.pose.data, b.dynamics.pose.data)


def test_stage_errors_named():
    m = VioPoseModel(small())
    kp, fe = inputs(small())
    with pytest.raises(ValueError, match=r"\[embed_pose\]"):
        m(kp[:, :5], fe)
    with pytest.raises(ValueError, match=r"\[encode_audio\]"):
        m(kp, fe[:, :, :20])


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(d_model=30, heads=8)
    with pytest.raises(ValueError, match="hierarchy"):
        ModelConfig(hierarchy="bogus")


def test_full_model_gradcheck_tiny():
    cfg = ModelConfig(frames=12, audio_frames=40, d_model=16, heads=2, d_ff=32, n_pose_blocks=1, n_hier_blocks=2,
                      joints=("R_wrist", "L_wrist", "L_hand"), conv_channels=(8, 6, 4))
    m = VioPoseModel(cfg, seed=6)
    kp, fe = inputs(cfg, b=2, seed=7)
    target = np.random.default_rng(8).normal(scale=50, size=(2, 12, 3, 3))

    def loss():
        out = m(kp, fe)
        d = out.dynamics
        r = d.pose - target
        return (r * r).mean() + (d.vel * d.vel).mean() + (d.acc * d.acc).mean() + (out.audio_pose * out.audio_pose).mean()

    # The last FFN bias of a hierarchy block feeds only a train-mode batch
    # norm, which removes any per-channel constant: its gradient is exactly
    # zero, so a relative error is meaningless there.
    null = {n for n in m.params if n.startswith("hier.") and n.endswith(".ffn.fc2.b")}
    assert len(null) == 3 * cfg.n_hier_blocks
    t0 = time.time()
    live = {n: p for n, p in m.params.items() if n not in null}
    errs = check_parameters(loss, live, per_tensor=3, rng=np.random.default_rng(0))
    assert max(errs.values()) < 1e-4, {k: v for k, v in errs.items() if v >= 1e-4}
    assert time.time() - t0 < 120

    grads = tape_grads(loss, [m.params[n] for n in sorted(null)])
    f0 = abs(float(loss().data))
    for n, g in zip(sorted(null), grads):
        assert np.abs(g).max() <= 1e-12 * f0, n
        num = numeric_grad(loss, m.params[n], coords=[0]).reshape(-1)[0]
        assert abs(num) < roundoff_floor(f0), n


# ------------------------------------------------------------ dynamics

def test_integrate_basics():
    z = np.zeros((1, 6, 2, 3))
    np.testing.assert_array_equal(integrate_time(z, 1.0, z).data, z)
    a = np.full((1, 6, 1, 1), 0.5)
    anchor = np.full((1, 6, 1, 1), 2.0)
    v = integrate_time(a, 0.1, anchor).data[0, :, 0, 0]
    np.testing.assert_allclose(v, 2.0 + np.arange(6) * 0.5 * 0.1, atol=1e-15)


def test_differentiate_of_integrate():
    t = np.arange(40) * 0.05
    x = np.sin(t)[None, :, None, None]
    y = differentiate_time(integrate_time(x, 0.05, np.zeros_like(x)), 0.05).data[0, 1:-1, 0, 0]
    # the exclusive sum lags half a step, so the error is first order in dt
    assert np.max(np.abs(y - np.sin(t[1:-1]))) < 0.05


def test_differentiate_cases():
    c = np.full((1, 7, 1, 1), 3.0)
    np.testing.assert_array_equal(differentiate_time(c, 1.0).data, 0.0)
    ramp = (2.5 * np.arange(7.0))[None, :, None, None]
    np.testing.assert_allclose(differentiate_time(ramp, 1.0).data, 2.5, atol=1e-12)
    for dt in (0.02, 0.01):
        t = np.arange(int(2 / dt)) * dt
        d = differentiate_time(np.sin(3 * t)[None, :, None, None], dt).data[0, :, 0, 0]
        err = np.max(np.abs(d - 3 * np.cos(3 * t)))
        assert err < 30 * dt**2
    with pytest.raises(ValueError):
        differentiate_time(np.zeros((1, 2, 1, 1)), 1.0)


def _ca(f=20, J=2, seed=0):
    rng = np.random.default_rng(seed)
    p0, v0, a0 = (rng.normal(size=(1, 1, J, 3)) for _ in range(3))
    k = np.arange(f)[None, :, None, None]
    return p0 + v0 * k + 0.5 * a0 * k * k, v0 + a0 * k, a0 + 0 * k


def test_mix_zero_dynamics():
    p = np.random.default_rng(1).normal(size=(1, 9, 2, 3))
    z = np.zeros_like(p)
    d = bidirectional_mix(p, z, z, 1.0)
    np.testing.assert_allclose(d.pose.data, 0.5 * (p + p[:, :1]), atol=1e-12)
    from viopose.numcore.ops import central_diff
    np.testing.assert_allclose(d.vel.data, 0.25 * central_diff(p, 1.0), atol=1e-12)


def test_mix_self_consistent_identity():
    a = np.random.default_rng(2).normal(size=(1, 15, 2, 3))
    v = integrate_time(a, 1.0, np.random.default_rng(3).normal(size=a.shape)).data
    p = integrate_time(v, 1.0, np.random.default_rng(4).normal(size=a.shape)).data
    d = bidirectional_mix(p, v, a, 1.0)
    assert np.array_equal(d.vel_int.data, v)


def test_mix_constant_acceleration_linear_velocity():
    p, v, a = _ca()
    d = bidirectional_mix(p, v, a, 1.0)
    vh = d.vel.data[0]
    second = vh[2:] - 2 * vh[1:-1] + vh[:-2]
    assert np.max(np.abs(second)) < 1e-9


def test_mix_modes():
    rng = np.random.default_rng(5)
    p, v, a = (rng.normal(size=(2, 10, 3, 3)) for _ in range(3))
    full = bidirectional_mix(p, v, a, 1.0, "full")
    no_diff = bidirectional_mix(p, v, a, 1.0, "no_diff")
    none = bidirectional_mix(p, v, a, 1.0, "none")
    np.testing.assert_array_equal(no_diff.pose.data, full.pose.data)
    np.testing.assert_array_equal(none.pose.data, p)
    assert not np.allclose(full.vel.data, none.vel.data)
    no_int = bidirectional_mix(p, v, a, 1.0, "no_int")
    np.testing.assert_array_equal(no_int.pose.data, p)
    with pytest.raises(ValueError):
        bidirectional_mix(p, v, a, 1.0, "sideways")


def test_mix_gradcheck():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(3, 1, 8, 2, 3))
    err = grad_check(lambda p, v, a: sum(((t * wi).sum() for t, wi in zip(
        (lambda d: (d.pose, d.vel, d.acc))(bidirectional_mix(p, v, a, 0.5)), w)), Tensor(0.0)),
        [rng.normal(size=(1, 8, 2, 3)) for _ in range(3)])
    assert err < 1e-6


# -------------------------------------------------------------- kalman

def test_kalman_noiseless_consistent():
    p, v, a = _ca(40)
    out = kalman_fuse(p, v, a)
    assert np.max(np.abs(out[:, 10:] - p[:, 10:])) < 1e-6


def test_kalman_reduces_noise_variance():
    rng = np.random.default_rng(7)
    p, v, a = _ca(200, J=4)
    noisy = p + rng.normal(scale=5.0, size=p.shape)
    out = kalman_fuse(noisy, v, a)
    assert np.var(out - p) < np.var(noisy - p)


def test_kalman_improves_velocity():
    rng = np.random.default_rng(8)
    p, v, a = _ca(200, J=4)
    noisy = p + rng.normal(scale=5.0, size=p.shape)
    from viopose.numcore.ops import central_diff
    vn = central_diff(noisy, 1.0)
    an = central_diff(vn, 1.0)
    out = kalman_fuse(noisy, vn, an)
    mpjve = lambda x: np.linalg.norm(central_diff(x, 1.0) - v, axis=-1).mean()
    assert mpjve(out) <= mpjve(noisy)


def test_kalman_r_sweep_smoothness():
    rng = np.random.default_rng(9)
    p, v, a = _ca(150, J=3)
    noisy = [x + rng.normal(scale=s, size=x.shape) for x, s in ((p, 5.0), (v, 2.0), (a, 2.0))]
    from viopose.numcore.ops import central_diff

    def jerkiness(out):
        return np.linalg.norm(central_diff(central_diff(out, 1.0), 1.0), axis=-1).mean()

    vals = [jerkiness(kalman_fuse(*noisy, r_diag=(25 * s, 4 * s, 4 * s))) for s in (0.25, 1.0, 4.0)]
    assert vals[0] >= vals[1] >= vals[2]


def test_kalman_rejects_nonfinite():
    p, v, a = _ca(10)
    p[0, 3, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        kalman_fuse(p, v, a)


# ---------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip(tmp_path):
    from viopose.numcore import AdamState, adam_step
    m = VioPoseModel(small(), seed=9)
    kp, fe = inputs(small())
    m.buffers["audio_mean"] = np.random.default_rng(1).normal(size=35)
    with Tape() as tape:
        loss = m(kp, fe).dynamics.pose.mean()
    tape.backward(loss)
    adam = AdamState()
    adam_step(m.params, adam)
    ref = m(kp, fe, train=False).dynamics.pose.data
    save_checkpoint(tmp_path, m, adam, {"epoch": 3})
    m2, adam2, extra = load_checkpoint(tmp_path)
    assert extra == {"epoch": 3} and adam2.step == 1
    for n in m.params:
        assert np.array_equal(adam.m[n], adam2.m[n]) and np.array_equal(adam.v[n], adam2.v[n])
    assert np.array_equal(m2(kp, fe, train=False).dynamics.pose.data, ref)


def test_checkpoint_truncated(tmp_path):
    m = VioPoseModel(small())
    save_checkpoint(tmp_path, m)
    p = tmp_path / "params.bin"
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="params.bin"):
        load_checkpoint(tmp_path)
