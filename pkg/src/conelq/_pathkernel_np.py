"""NumPy fallback for the Euler path kernel.

Mirrors conelq._pathkernel operation for operation (same order of scalar
additions per path) so both backends produce identical floating-point
results.  Vectorized over paths; the time loop stays in Python.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def simulate_batch(
    x0,
    dW,
    counts,
    A, C, Q,
    B1, D1, S1,
    B2, D2, S2,
    R11, R12, R22,
    E, F1, F2, nu,
    G, dt,
    th1p, th1m, th2p, th2m, fb_scale,
    off1, off2,
    rep1, rep2,
    keep, record,
):
    n, nb = dW.shape
    m1, m2 = B1.shape[1], B2.shape[1]
    J = nu.shape[0]
    has_fb = fb_scale != 0.0
    has_off = off1 is not None
    has_rep = rep1 is not None

    x = x0.astype(np.float64).copy()
    cost = np.zeros(nb)
    Xk = np.empty((keep, n + 1)) if keep else np.empty((0, n + 1))
    U1k = np.empty((keep, n, m1)) if keep else np.empty((0, n, m1))
    U2k = np.empty((keep, n, m2)) if keep else np.empty((0, n, m2))
    U1f = np.empty((n, nb, m1)) if record else None
    U2f = np.empty((n, nb, m2)) if record else None
    if keep:
        Xk[:, 0] = x[:keep]

    u1 = [np.zeros(nb) for _ in range(m1)]
    u2 = [np.zeros(nb) for _ in range(m2)]
    for i in range(n):
        xp = np.maximum(x, 0.0)
        xm = np.maximum(-x, 0.0)
        for l in range(m1):
            v = np.zeros(nb)
            if has_fb:
                v = v + fb_scale * (th1p[i, l] * xp + th1m[i, l] * xm)
            if has_off:
                v = v + off1[i, l]
            if has_rep:
                v = v + rep1[i, :, l]
            u1[l] = v
        for l in range(m2):
            v = np.zeros(nb)
            if has_fb:
                v = v + fb_scale * (th2p[i, l] * xp + th2m[i, l] * xm)
            if has_off:
                v = v + off2[i, l]
            if has_rep:
                v = v + rep2[i, :, l]
            u2[l] = v

        b1u1 = np.zeros(nb)
        d1u1 = np.zeros(nb)
        s1u1 = np.zeros(nb)
        for l in range(m1):
            b1u1 = b1u1 + B1[i, l] * u1[l]
            d1u1 = d1u1 + D1[i, l] * u1[l]
            s1u1 = s1u1 + S1[i, l] * u1[l]
        b2u2 = np.zeros(nb)
        d2u2 = np.zeros(nb)
        s2u2 = np.zeros(nb)
        for l in range(m2):
            b2u2 = b2u2 + B2[i, l] * u2[l]
            d2u2 = d2u2 + D2[i, l] * u2[l]
            s2u2 = s2u2 + S2[i, l] * u2[l]

        r11 = np.zeros(nb)
        for l in range(m1):
            for r in range(m1):
                r11 = r11 + u1[l] * (R11[i, l, r] * u1[r])
        r12 = np.zeros(nb)
        for l in range(m1):
            for r in range(m2):
                r12 = r12 + u1[l] * (R12[i, l, r] * u2[r])
        r22 = np.zeros(nb)
        for l in range(m2):
            for r in range(m2):
                r22 = r22 + u2[l] * (R22[i, l, r] * u2[r])

        drift = A[i] * x + b1u1 + b2u2
        diff = C[i] * x + d1u1 + d2u2
        jmp = np.zeros(nb)
        comp = np.zeros(nb)
        for j in range(J):
            amp = E[i, j] * x
            for l in range(m1):
                amp = amp + F1[i, j, l] * u1[l]
            for l in range(m2):
                amp = amp + F2[i, j, l] * u2[l]
            jmp = jmp + counts[j, i] * amp
            comp = comp + nu[j] * amp

        cost = cost + dt * (Q[i] * (x * x) + 2.0 * (x * s1u1) + 2.0 * (x * s2u2) + r11 + 2.0 * r12 + r22)
        x = x + (drift - comp) * dt + diff * dW[i] + jmp

        if keep:
            Xk[:, i + 1] = x[:keep]
            for l in range(m1):
                U1k[:, i, l] = u1[l][:keep]
            for l in range(m2):
                U2k[:, i, l] = u2[l][:keep]
        if record:
            for l in range(m1):
                U1f[i, :, l] = u1[l]
            for l in range(m2):
                U2f[i, :, l] = u2[l]

    cost = cost + G * (x * x)
    return cost, x, Xk, U1k, U2k, U1f, U2f
