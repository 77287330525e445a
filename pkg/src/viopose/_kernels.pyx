# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: DTW accumulation, constant-acceleration Kalman recursion, guarded peak picking."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def dtw_accumulate(const double[:, ::1] cost):
    """Return (total cost, path length) of the optimal symmetric-step warping path."""
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1], i, j
    cdef double[:, ::1] acc = np.empty((n, m))
    cdef long[:, ::1] steps = np.empty((n, m), dtype=np.int64)
    cdef double best, c
    cdef long s
    acc[0, 0] = cost[0, 0]
    steps[0, 0] = 1
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        steps[0, j] = steps[0, j - 1] + 1
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        steps[i, 0] = steps[i - 1, 0] + 1
        for j in range(1, m):
            # ties resolve diagonal, then vertical, then horizontal
            best = acc[i - 1, j - 1]
            s = steps[i - 1, j - 1]
            c = acc[i - 1, j]
            if c < best:
                best = c
                s = steps[i - 1, j]
            c = acc[i, j - 1]
            if c < best:
                best = c
                s = steps[i, j - 1]
            acc[i, j] = best + cost[i, j]
            steps[i, j] = s + 1
    return acc[n - 1, m - 1], int(steps[n - 1, m - 1])


cdef void _inv3(double[:, ::1] a, double[:, ::1] out) noexcept nogil:
    cdef double c00 = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    cdef double c01 = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    cdef double c02 = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    cdef double det = a[0, 0] * c00 + a[0, 1] * c01 + a[0, 2] * c02
    cdef double inv = 1.0 / det
    out[0, 0] = c00 * inv
    out[1, 0] = c01 * inv
    out[2, 0] = c02 * inv
    out[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) * inv
    out[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) * inv
    out[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) * inv
    out[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) * inv
    out[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) * inv
    out[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) * inv


def kalman_ca(const double[:, :, ::1] z, const double[:, ::1] F, const double[:, ::1] Q, const double[:, ::1] R):
    """Filter ``z[series, frame, 3]`` (measured p, v, a) with identity observation.

    The state starts at the first measurement with covariance ``R``.  The
    gain sequence is shared by every series, so it is computed once per frame.
    """
    cdef Py_ssize_t ns = z.shape[0], nf = z.shape[1], s, k, i, j, l
    out_arr = np.empty((ns, nf, 3))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] P = np.array(R, dtype=np.float64, copy=True)
    cdef double[:, ::1] Pp = np.empty((3, 3))
    cdef double[:, ::1] T = np.empty((3, 3))
    cdef double[:, ::1] S = np.empty((3, 3))
    cdef double[:, ::1] Si = np.empty((3, 3))
    cdef double[:, ::1] K = np.empty((3, 3))
    cdef double xp[3]
    cdef double inn[3]
    cdef double acc
    if nf == 0:
        return out_arr
    for s in range(ns):
        for i in range(3):
            out[s, 0, i] = z[s, 0, i]
    for k in range(1, nf):
        # P- = F P F^T + Q
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + F[i, l] * P[l, j]
                T[i, j] = acc
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + T[i, l] * F[j, l]
                Pp[i, j] = acc + Q[i, j]
                S[i, j] = Pp[i, j] + R[i, j]
        _inv3(S, Si)
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + Pp[i, l] * Si[l, j]
                K[i, j] = acc
        # P = (I - K) P-
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + K[i, l] * Pp[l, j]
                P[i, j] = Pp[i, j] - acc
        for s in range(ns):
            for i in range(3):
                acc = 0.0
                for l in range(3):
                    acc = acc + F[i, l] * out[s, k - 1, l]
                xp[i] = acc
            for i in range(3):
                inn[i] = z[s, k, i] - xp[i]
            for i in range(3):
                acc = xp[i]
                for l in range(3):
                    acc = acc + K[i, l] * inn[l]
                out[s, k, i] = acc
    return out_arr


def pick_peaks(const double[::1] env, Py_ssize_t guard, double threshold):
    """1 where ``env`` exceeds ``threshold`` and is the first maximum within +-guard frames."""
    cdef Py_ssize_t n = env.shape[0], t, u, lo, hi
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef bint ok
    for t in range(n):
        if env[t] <= threshold:
            continue
        lo = t - guard if t > guard else 0
        hi = t + guard + 1 if t + guard + 1 < n else n
        ok = True
        for u in range(lo, hi):
            if (u < t and env[u] >= env[t]) or (u > t and env[u] > env[t]):
                ok = False
                break
        if ok:
            out[t] = 1.0
    return out_arr
