import itertools

import numpy as np
import pytest

from viopose import _kernels_py, kernels

BACKENDS = [pytest.param(_kernels_py, id="python")]
if kernels.compiled_backend is not None:
    BACKENDS.append(pytest.param(kernels.compiled_backend, id="cython"))


def brute_dtw(cost):
    """Minimum over all monotone paths by explicit enumeration."""
    n, m = cost.shape
    best = [np.inf, 0]

    def walk(i, j, total, length):
        total += cost[i, j]
        length += 1
        if (i, j) == (n - 1, m - 1):
            if total < best[0]:
                best[:] = [total, length]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, total, length)

    walk(0, 0, 0.0, 0)
    return best[0]


@pytest.mark.parametrize("backend", BACKENDS)
def test_dtw_matches_brute_force(backend):
    rng = np.random.default_rng(0)
    for n, m in itertools.product(range(1, 7), repeat=2):
        cost = rng.random((n, m))
        total, steps = backend.dtw_accumulate(cost)
        assert total == pytest.approx(brute_dtw(cost), abs=1e-12)
        assert max(n, m) <= steps <= n + m - 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_dtw_identical_sequences_diagonal(backend):
    x = np.arange(6.0)
    cost = np.abs(x[:, None] - x[None, :])
    assert backend.dtw_accumulate(cost) == (0.0, 6)


def test_dtw_backends_agree():
    if kernels.compiled_backend is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(1)
    cost = rng.random((40, 55))
    a = _kernels_py.dtw_accumulate(cost)
    b = kernels.compiled_backend.dtw_accumulate(cost)
    assert a[1] == b[1]
    assert a[0] == pytest.approx(b[0], rel=1e-12)


def _ca_model(dt=1.0):
    F = np.array([[1, dt, dt * dt / 2], [0, 1, dt], [0, 0, 1]])
    G = np.array([dt * dt / 2, dt, 1.0])
    return F, np.outer(G, G), np.diag([25.0, 4.0, 4.0])


def test_kalman_backends_agree():
    if kernels.compiled_backend is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(2)
    z = rng.normal(size=(12, 50, 3))
    F, Q, R = _ca_model()
    np.testing.assert_allclose(
        kernels.compiled_backend.kalman_ca(z, F, Q, R), _kernels_py.kalman_ca(z, F, Q, R), rtol=1e-10, atol=1e-10
    )


@pytest.mark.parametrize("backend", BACKENDS)
def test_kalman_tracks_consistent_trajectory(backend):
    # noiseless constant-acceleration measurements are a fixed point of the filter
    t = np.arange(40.0)
    a = 0.3
    z = np.stack([5 + 2 * t + a * t * t / 2, 2 + a * t, np.full_like(t, a)], axis=1)[None]
    F, Q, R = _ca_model()
    np.testing.assert_allclose(backend.kalman_ca(z, F, Q, R), z, atol=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_pick_peaks_guard_and_threshold(backend):
    env = np.array([0, 5, 0, 0, 4, 0, 0, 0, 0, 6, 6, 0, 1.0])
    out = backend.pick_peaks(env, 2, 2.0)
    # index 4 sits 3 frames from index 1 (outside the guard); the 6/6 tie keeps the first
    assert list(np.flatnonzero(out)) == [1, 4, 9]


def test_pick_peaks_backends_agree():
    if kernels.compiled_backend is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(3)
    env = np.round(rng.random(2000) * 20) / 20  # plenty of ties
    for guard in (1, 3, 15):
        np.testing.assert_array_equal(
            kernels.compiled_backend.pick_peaks(env, guard, 0.5), _kernels_py.pick_peaks(env, guard, 0.5)
        )


def test_dispatch_reports_backend():
    assert kernels.BACKEND in ("cython", "python")
