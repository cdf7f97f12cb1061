# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU sequence kernels; same contract as ``pedfuse._gru_py``.

Input projections and weight gradients go through BLAS; the per-step
recurrence runs as plain C loops, which wins for the small hidden sizes used
at desk scale.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sig(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


def gru_forward(xs, h0, W, U, b):
    cdef Py_ssize_t B = xs.shape[0], T = xs.shape[1], H = h0.shape[1]
    cdef Py_ssize_t bi, t, i, j
    cdef double az, ar, an, hv
    xp_arr = np.ascontiguousarray(xs @ W.T + b)
    hs_arr = np.empty((B, T, H))
    z_arr = np.empty((B, T, H))
    r_arr = np.empty((B, T, H))
    n_arr = np.empty((B, T, H))
    rh_arr = np.empty(H)
    h_arr = np.ascontiguousarray(h0, dtype=np.float64).copy()
    cdef double[:, :, ::1] xp = xp_arr
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, ::1] r = r_arr
    cdef double[:, :, ::1] n = n_arr
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[:, ::1] h = h_arr
    cdef double[::1] rh = rh_arr
    with nogil:
        for bi in range(B):
            for t in range(T):
                for i in range(H):
                    az = xp[bi, t, i]
                    ar = xp[bi, t, H + i]
                    for j in range(H):
                        hv = h[bi, j]
                        az = az + Uv[i, j] * hv
                        ar = ar + Uv[H + i, j] * hv
                    z[bi, t, i] = _sig(az)
                    r[bi, t, i] = _sig(ar)
                for j in range(H):
                    rh[j] = r[bi, t, j] * h[bi, j]
                for i in range(H):
                    an = xp[bi, t, 2 * H + i]
                    for j in range(H):
                        an = an + Uv[2 * H + i, j] * rh[j]
                    n[bi, t, i] = tanh(an)
                for i in range(H):
                    h[bi, i] = (1.0 - z[bi, t, i]) * h[bi, i] + z[bi, t, i] * n[bi, t, i]
                    hs[bi, t, i] = h[bi, i]
    return hs_arr, z_arr, r_arr, n_arr


def gru_backward(xs, h0, hs_in, z_in, r_in, n_in, W, U, ghs_in):
    cdef Py_ssize_t B = xs.shape[0], T = xs.shape[1], I = xs.shape[2], H = h0.shape[1]
    cdef Py_ssize_t bi, t, i, j
    cdef double dht, zt, nt, rt, hp, acc
    da_arr = np.empty((B, T, 3 * H))
    dh_arr = np.zeros((B, H))
    dhn_arr = np.empty(H)
    drh_arr = np.empty(H)
    cdef double[:, :, ::1] da = da_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[::1] dhn = dhn_arr
    cdef double[::1] drh = drh_arr
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef double[:, :, ::1] z = np.ascontiguousarray(z_in, dtype=np.float64)
    cdef double[:, :, ::1] r = np.ascontiguousarray(r_in, dtype=np.float64)
    cdef double[:, :, ::1] n = np.ascontiguousarray(n_in, dtype=np.float64)
    cdef double[:, :, ::1] ghs = np.ascontiguousarray(ghs_in, dtype=np.float64)
    cdef double[:, ::1] h0v = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    with nogil:
        for bi in range(B):
            for t in range(T - 1, -1, -1):
                for i in range(H):
                    hp = hs[bi, t - 1, i] if t > 0 else h0v[bi, i]
                    dht = ghs[bi, t, i] + dh[bi, i]
                    zt = z[bi, t, i]
                    nt = n[bi, t, i]
                    da[bi, t, 2 * H + i] = dht * zt * (1.0 - nt * nt)
                    da[bi, t, i] = dht * (nt - hp) * zt * (1.0 - zt)
                    dhn[i] = dht * (1.0 - zt)
                for j in range(H):
                    drh[j] = 0.0
                for i in range(H):
                    acc = da[bi, t, 2 * H + i]
                    for j in range(H):
                        drh[j] = drh[j] + acc * Uv[2 * H + i, j]
                for j in range(H):
                    hp = hs[bi, t - 1, j] if t > 0 else h0v[bi, j]
                    rt = r[bi, t, j]
                    da[bi, t, H + j] = drh[j] * hp * rt * (1.0 - rt)
                    dh[bi, j] = dhn[j] + drh[j] * rt
                for i in range(H):
                    zt = da[bi, t, i]
                    rt = da[bi, t, H + i]
                    for j in range(H):
                        dh[bi, j] = dh[bi, j] + zt * Uv[i, j] + rt * Uv[H + i, j]
    # recurrent weight gradients in one BLAS call per block
    hprev = np.concatenate([np.asarray(h0v)[:, None, :], np.asarray(hs)[:, :-1]], axis=1).reshape(-1, H)
    da2 = da_arr.reshape(-1, 3 * H)
    gU_arr = np.empty((3 * H, H))
    gU_arr[: 2 * H] = da2[:, : 2 * H].T @ hprev
    gU_arr[2 * H :] = da2[:, 2 * H :].T @ (np.asarray(r).reshape(-1, H) * hprev)
    gxs = da_arr @ W
    gW = da2.T @ xs.reshape(-1, I)
    gb = da2.sum(axis=0)
    return gxs, dh_arr, gW, gU_arr, gb
