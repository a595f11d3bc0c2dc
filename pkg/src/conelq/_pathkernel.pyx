# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Euler path kernel.

Step-outer / path-inner loops so every large array (dW, counts, replay,
record) is traversed contiguously.  Must stay operation-for-operation in
sync with conelq._pathkernel_np so the two backends agree bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"

cdef int _MAXM = 16


def simulate_batch(
    const double[::1] x0,
    const double[:, ::1] dW,
    const double[:, :, ::1] counts,
    const double[::1] A, const double[::1] C, const double[::1] Q,
    const double[:, ::1] B1, const double[:, ::1] D1, const double[:, ::1] S1,
    const double[:, ::1] B2, const double[:, ::1] D2, const double[:, ::1] S2,
    const double[:, :, ::1] R11, const double[:, :, ::1] R12, const double[:, :, ::1] R22,
    const double[:, ::1] E, const double[:, :, ::1] F1, const double[:, :, ::1] F2, const double[::1] nu,
    double G, double dt,
    const double[:, ::1] th1p, const double[:, ::1] th1m, const double[:, ::1] th2p, const double[:, ::1] th2m,
    double fb_scale,
    off1_obj, off2_obj,
    rep1_obj, rep2_obj,
    int keep, bint record,
):
    cdef Py_ssize_t n = dW.shape[0]
    cdef Py_ssize_t nb = dW.shape[1]
    cdef Py_ssize_t m1 = B1.shape[1]
    cdef Py_ssize_t m2 = B2.shape[1]
    cdef Py_ssize_t J = nu.shape[0]
    cdef bint has_fb = fb_scale != 0.0
    cdef bint has_off = off1_obj is not None
    cdef bint has_rep = rep1_obj is not None

    if m1 > _MAXM or m2 > _MAXM or J > _MAXM:
        raise ValueError("compiled kernel supports control dimensions and mark counts up to 16")

    cdef const double[:, ::1] off1 = off1_obj if has_off else np.zeros((1, 1))
    cdef const double[:, ::1] off2 = off2_obj if has_off else np.zeros((1, 1))
    cdef const double[:, :, ::1] rep1 = rep1_obj if has_rep else np.zeros((1, 1, 1))
    cdef const double[:, :, ::1] rep2 = rep2_obj if has_rep else np.zeros((1, 1, 1))

    cost_arr = np.zeros(nb)
    x_arr = np.array(x0, dtype=np.float64)
    Xk_arr = np.empty((keep, n + 1)) if keep else np.empty((0, n + 1))
    U1k_arr = np.empty((keep, n, m1)) if keep else np.empty((0, n, m1))
    U2k_arr = np.empty((keep, n, m2)) if keep else np.empty((0, n, m2))
    U1f_arr = np.empty((n, nb, m1)) if record else None
    U2f_arr = np.empty((n, nb, m2)) if record else None

    cdef double[::1] cost = cost_arr
    cdef double[::1] xs = x_arr
    cdef double[:, ::1] Xk = Xk_arr
    cdef double[:, :, ::1] U1k = U1k_arr
    cdef double[:, :, ::1] U2k = U2k_arr
    cdef double[:, :, ::1] U1f = U1f_arr if record else np.zeros((1, 1, 1))
    cdef double[:, :, ::1] U2f = U2f_arr if record else np.zeros((1, 1, 1))

    # per-step coefficient values hoisted onto the stack
    cdef double b1l[16]
    cdef double d1l[16]
    cdef double s1l[16]
    cdef double t1pl[16]
    cdef double t1ml[16]
    cdef double o1l[16]
    cdef double b2l[16]
    cdef double d2l[16]
    cdef double s2l[16]
    cdef double t2pl[16]
    cdef double t2ml[16]
    cdef double o2l[16]
    cdef double r11m[256]
    cdef double r12m[256]
    cdef double r22m[256]
    cdef double ej[16]
    cdef double f1m[256]
    cdef double f2m[256]
    cdef double u1[16]
    cdef double u2[16]

    cdef Py_ssize_t p, i, l, r, j
    cdef double x, xp, xm, v, Ai, Ci, Qi
    cdef double b1u1, d1u1, s1u1, b2u2, d2u2, s2u2
    cdef double r11, r12, r22, drift, diff, jmp, comp, amp

    if keep:
        for p in range(keep):
            Xk[p, 0] = xs[p]

    for i in range(n):
        Ai = A[i]
        Ci = C[i]
        Qi = Q[i]
        for l in range(m1):
            b1l[l] = B1[i, l]
            d1l[l] = D1[i, l]
            s1l[l] = S1[i, l]
            t1pl[l] = th1p[i, l] if has_fb else 0.0
            t1ml[l] = th1m[i, l] if has_fb else 0.0
            o1l[l] = off1[i, l] if has_off else 0.0
            for r in range(m1):
                r11m[l * m1 + r] = R11[i, l, r]
            for r in range(m2):
                r12m[l * m2 + r] = R12[i, l, r]
        for l in range(m2):
            b2l[l] = B2[i, l]
            d2l[l] = D2[i, l]
            s2l[l] = S2[i, l]
            t2pl[l] = th2p[i, l] if has_fb else 0.0
            t2ml[l] = th2m[i, l] if has_fb else 0.0
            o2l[l] = off2[i, l] if has_off else 0.0
            for r in range(m2):
                r22m[l * m2 + r] = R22[i, l, r]
        for j in range(J):
            ej[j] = E[i, j]
            for l in range(m1):
                f1m[j * m1 + l] = F1[i, j, l]
            for l in range(m2):
                f2m[j * m2 + l] = F2[i, j, l]

        for p in range(nb):
            x = xs[p]
            xp = x if x > 0.0 else 0.0
            xm = -x if x < 0.0 else 0.0
            for l in range(m1):
                v = 0.0
                if has_fb:
                    v = v + fb_scale * (t1pl[l] * xp + t1ml[l] * xm)
                if has_off:
                    v = v + o1l[l]
                if has_rep:
                    v = v + rep1[i, p, l]
                u1[l] = v
            for l in range(m2):
                v = 0.0
                if has_fb:
                    v = v + fb_scale * (t2pl[l] * xp + t2ml[l] * xm)
                if has_off:
                    v = v + o2l[l]
                if has_rep:
                    v = v + rep2[i, p, l]
                u2[l] = v

            b1u1 = 0.0
            d1u1 = 0.0
            s1u1 = 0.0
            for l in range(m1):
                b1u1 = b1u1 + b1l[l] * u1[l]
                d1u1 = d1u1 + d1l[l] * u1[l]
                s1u1 = s1u1 + s1l[l] * u1[l]
            b2u2 = 0.0
            d2u2 = 0.0
            s2u2 = 0.0
            for l in range(m2):
                b2u2 = b2u2 + b2l[l] * u2[l]
                d2u2 = d2u2 + d2l[l] * u2[l]
                s2u2 = s2u2 + s2l[l] * u2[l]

            r11 = 0.0
            for l in range(m1):
                for r in range(m1):
                    r11 = r11 + u1[l] * (r11m[l * m1 + r] * u1[r])
            r12 = 0.0
            for l in range(m1):
                for r in range(m2):
                    r12 = r12 + u1[l] * (r12m[l * m2 + r] * u2[r])
            r22 = 0.0
            for l in range(m2):
                for r in range(m2):
                    r22 = r22 + u2[l] * (r22m[l * m2 + r] * u2[r])

            drift = Ai * x + b1u1 + b2u2
            diff = Ci * x + d1u1 + d2u2
            jmp = 0.0
            comp = 0.0
            for j in range(J):
                amp = ej[j] * x
                for l in range(m1):
                    amp = amp + f1m[j * m1 + l] * u1[l]
                for l in range(m2):
                    amp = amp + f2m[j * m2 + l] * u2[l]
                jmp = jmp + counts[j, i, p] * amp
                comp = comp + nu[j] * amp

            cost[p] = cost[p] + dt * (Qi * (x * x) + 2.0 * (x * s1u1) + 2.0 * (x * s2u2) + r11 + 2.0 * r12 + r22)
            xs[p] = x + (drift - comp) * dt + diff * dW[i, p] + jmp

            if p < keep:
                Xk[p, i + 1] = xs[p]
                for l in range(m1):
                    U1k[p, i, l] = u1[l]
                for l in range(m2):
                    U2k[p, i, l] = u2[l]
            if record:
                for l in range(m1):
                    U1f[i, p, l] = u1[l]
                for l in range(m2):
                    U2f[i, p, l] = u2[l]

    for p in range(nb):
        cost[p] = cost[p] + G * (xs[p] * xs[p])

    return cost_arr, x_arr, Xk_arr, U1k_arr, U2k_arr, U1f_arr, U2f_arr
