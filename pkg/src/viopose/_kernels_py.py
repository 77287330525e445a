"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def dtw_accumulate(cost):
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = [[0.0] * m for _ in range(n)]
    steps = [[0] * m for _ in range(n)]
    c = cost.tolist()
    acc[0][0] = c[0][0]
    steps[0][0] = 1
    for j in range(1, m):
        acc[0][j] = acc[0][j - 1] + c[0][j]
        steps[0][j] = steps[0][j - 1] + 1
    for i in range(1, n):
        prev, row, ps, rs = acc[i - 1], acc[i], steps[i - 1], steps[i]
        row[0] = prev[0] + c[i][0]
        rs[0] = ps[0] + 1
        ci = c[i]
        for j in range(1, m):
            best, s = prev[j - 1], ps[j - 1]
            if prev[j] < best:
                best, s = prev[j], ps[j]
            if row[j - 1] < best:
                best, s = row[j - 1], rs[j - 1]
            row[j] = best + ci[j]
            rs[j] = s + 1
    return acc[n - 1][m - 1], steps[n - 1][m - 1]


def kalman_ca(z, F, Q, R):
    z = np.asarray(z, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    ns, nf, _ = z.shape
    out = np.empty_like(z)
    if nf == 0:
        return out
    out[:, 0] = z[:, 0]
    P = R.copy()
    for k in range(1, nf):
        Pp = F @ P @ F.T + Q
        K = Pp @ np.linalg.inv(Pp + R)
        P = Pp - K @ Pp
        xp = out[:, k - 1] @ F.T
        out[:, k] = xp + (z[:, k] - xp) @ K.T
    return out


def pick_peaks(env, guard, threshold):
    env = np.asarray(env, dtype=np.float64)
    n = len(env)
    out = np.zeros(n)
    for t in range(n):
        v = env[t]
        if v <= threshold:
            continue
        lo, hi = max(0, t - guard), min(n, t + guard + 1)
        if all(env[u] < v for u in range(lo, t)) and all(env[u] <= v for u in range(t + 1, hi)):
            out[t] = 1.0
    return out
