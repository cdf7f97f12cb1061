"""Numpy reference kernels for a GRU run over a whole sequence.

Gate blocks are stacked in the order (update z, reset r, candidate n):
``W`` is [3H, in], ``U`` is [3H, H], ``b`` is [3H].  The recurrence is

    z = sigmoid(x W_z^T + h U_z^T + b_z)
    r = sigmoid(x W_r^T + h U_r^T + b_r)
    n = tanh(x W_n^T + (r * h) U_n^T + b_n)
    h' = (1 - z) * h + z * n
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(xs, h0, W, U, b):
    B, T, _ = xs.shape
    H = h0.shape[1]
    xp = xs @ W.T + b
    U_zr, U_n = U[: 2 * H], U[2 * H :]
    hs = np.empty((B, T, H), dtype=xp.dtype)
    z = np.empty((B, T, H), dtype=xp.dtype)
    r = np.empty((B, T, H), dtype=xp.dtype)
    n = np.empty((B, T, H), dtype=xp.dtype)
    h = h0
    for t in range(T):
        zr = _sigmoid(xp[:, t, : 2 * H] + h @ U_zr.T)
        zt, rt = zr[:, :H], zr[:, H:]
        nt = np.tanh(xp[:, t, 2 * H :] + (rt * h) @ U_n.T)
        h = (1.0 - zt) * h + zt * nt
        hs[:, t], z[:, t], r[:, t], n[:, t] = h, zt, rt, nt
    return hs, z, r, n


def gru_backward(xs, h0, hs, z, r, n, W, U, ghs):
    B, T, I = xs.shape
    H = h0.shape[1]
    U_z, U_r, U_n = U[:H], U[H : 2 * H], U[2 * H :]
    da = np.empty((B, T, 3 * H))
    gU = np.zeros_like(U)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        hp = hs[:, t - 1] if t > 0 else h0
        zt, rt, nt = z[:, t], r[:, t], n[:, t]
        dht = ghs[:, t] + dh
        dn = dht * zt
        dz = dht * (nt - hp)
        dh = dht * (1.0 - zt)
        dan = dn * (1.0 - nt * nt)
        drh = dan @ U_n
        dr = drh * hp
        dh = dh + drh * rt
        daz = dz * zt * (1.0 - zt)
        dar = dr * rt * (1.0 - rt)
        dh = dh + daz @ U_z + dar @ U_r
        da[:, t, :H], da[:, t, H : 2 * H], da[:, t, 2 * H :] = daz, dar, dan
        gU[: 2 * H] += da[:, t, : 2 * H].T @ hp
        gU[2 * H :] += dan.T @ (rt * hp)
    gxs = da @ W
    da2 = da.reshape(-1, 3 * H)
    gW = da2.T @ xs.reshape(-1, I)
    gb = da2.sum(axis=0)
    return gxs, dh, gW, gU, gb
