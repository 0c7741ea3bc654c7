"""Compiled double sums over grid pairs."""

import numpy as np
from numba import njit


@njit(cache=True)
def _ipow(x, p):
    out = 1.0
    while p > 0:
        if p & 1:
            out *= x
        x *= x
        p >>= 1
    return out


@njit(cache=True)
def _push(mx, s, b, p):
    # streaming sum of b**p, stored as mx**p * s
    if b <= 0.0:
        return mx, s
    if b > mx:
        if mx > 0.0:
            s = s * _ipow(mx / b, p) + 1.0
        else:
            s = 1.0
        mx = b
    else:
        s += _ipow(b / mx, p)
    return mx, s


@njit(cache=True)
def _pair_scan(x, A, y, B, c1, c2, p1, p2):
    # streaming fallback for inputs whose powers leave double range
    M = x.shape[0] - 1
    d = x.shape[1]
    D = np.zeros((d, d))
    mx1 = 0.0
    s1 = 0.0
    mx2 = 0.0
    s2 = 0.0
    for i in range(M):
        for a in range(d):
            for b in range(d):
                D[a, b] = 0.0
        for j in range(i + 1, M + 1):
            k = j - 1
            n1 = 0.0
            n2 = 0.0
            for a in range(d):
                xa = x[k, a] - x[i, a]
                ya = y[k, a] - y[i, a]
                for b in range(d):
                    D[a, b] += (A[k, a, b] - B[k, a, b]) + xa * (x[j, b] - x[k, b]) - ya * (y[j, b] - y[k, b])
                    n2 += D[a, b] * D[a, b]
                z = (x[j, a] - x[i, a]) - (y[j, a] - y[i, a])
                n1 += z * z
            r = j - i
            mx1, s1 = _push(mx1, s1, np.sqrt(n1) * c1[r], p1)
            mx2, s2 = _push(mx2, s2, np.sqrt(n2) * c2[r], p2)
    return mx1, s1, mx2, s2


_FAST = {"reassoc", "contract", "arcp", "nsz"}


@njit(cache=True, fastmath=_FAST)
def _vpow_sum(q, L, h, base, acc):
    # sum_i q[i]**h for i < L by binary powering in vector passes
    for i in range(L):
        base[i] = q[i]
        acc[i] = 1.0
    while h > 0:
        if h & 1:
            for i in range(L):
                acc[i] *= base[i]
        h >>= 1
        if h > 0:
            for i in range(L):
                base[i] *= base[i]
    s = 0.0
    for i in range(L):
        s += acc[i]
    return s


@njit(cache=True, fastmath=_FAST)
def _scaled_scan(xT, dxT, yT, dyT, ET, w1, w2, h1, h2):
    """Sums of ``(w1[r] |dw1|^2)^h1`` and ``(w2[r] |dw2|^2)^h2`` over pairs, lag-major."""
    d, M1 = xT.shape
    M = M1 - 1
    D = np.zeros((d, d, M))
    n1 = np.empty(M)
    n2 = np.empty(M)
    base = np.empty(M)
    acc = np.empty(M)
    s1 = 0.0
    s2 = 0.0
    for r in range(1, M + 1):
        L = M - r + 1
        for i in range(L):
            n1[i] = 0.0
            n2[i] = 0.0
        for a in range(d):
            xa = xT[a]
            ya = yT[a]
            for b in range(d):
                Dab = D[a, b]
                Eab = ET[a, b]
                dxb = dxT[b]
                dyb = dyT[b]
                for i in range(L):
                    k = i + r - 1
                    v = Dab[i] + Eab[k] + (xa[k] - xa[i]) * dxb[k] - (ya[k] - ya[i]) * dyb[k]
                    Dab[i] = v
                    n2[i] += v * v
            for i in range(L):
                z = xa[i + r] - xa[i] - (ya[i + r] - ya[i])
                n1[i] += z * z
        for i in range(L):
            n1[i] *= w1[r]
            n2[i] *= w2[r]
        s1 += _vpow_sum(n1, L, h1, base, acc)
        s2 += _vpow_sum(n2, L, h2, base, acc)
    return s1, s2


def besov_pair_sums(x, A, y, B, c1, c2, p1, p2):
    """Besov norms of the difference of two rough paths on a common grid.

    ``c1[r]``/``c2[r]`` are the lag-``r`` weights raised to ``1/p1``/``1/p2``.
    Returns ``(n1, n2)`` with ``n1 = (sum |dw1|^p1 w_r)^(1/p1)`` and
    ``n2 = (sum |dw2|^p2 w_r)^(1/p2)``.
    """
    dx = np.diff(x, axis=0)
    dy = np.diff(y, axis=0)
    E = A - B
    # scale from adjacent intervals keeps the powers inside double range
    sc1 = float(np.max(np.linalg.norm(dx - dy, axis=1)) * c1[1])
    sc2 = float(np.max(np.linalg.norm(E, axis=(1, 2))) * c2[1])
    sc1 = sc1 if sc1 > 1e-280 else 1.0
    sc2 = sc2 if sc2 > 1e-280 else 1.0
    args = (
        np.ascontiguousarray(x.T),
        np.ascontiguousarray(dx.T),
        np.ascontiguousarray(y.T),
        np.ascontiguousarray(dy.T),
        np.ascontiguousarray(E.transpose(1, 2, 0)),
    )
    s1, s2 = _scaled_scan(*args, (c1 / sc1) ** 2, (c2 / sc2) ** 2, p1 // 2, p2 // 2)
    if np.isfinite(s1) and np.isfinite(s2) and s1 < 1e250 and s2 < 1e250:
        return sc1 * s1 ** (1.0 / p1), sc2 * s2 ** (1.0 / p2)
    mx1, s1, mx2, s2 = _pair_scan(x, A, y, B, c1, c2, p1, p2)
    return mx1 * s1 ** (1.0 / p1), mx2 * s2 ** (1.0 / p2)


@njit(cache=True)
def chen_level2(x, A, i, j):
    """Level-2 increment over grid indices ``i < j`` accumulated locally from ``i``."""
    d = x.shape[1]
    D = np.zeros((d, d))
    for k in range(i, j):
        for a in range(d):
            xa = x[k, a] - x[i, a]
            for b in range(d):
                D[a, b] += A[k, a, b] + xa * (x[k + 1, b] - x[k, b])
    return D


@njit(cache=True)
def hoelder_max(v, alpha):
    """``max_{i<j} |v_j - v_i| / ((j - i) / M)^alpha`` over all grid pairs."""
    n, d = v.shape
    M = n - 1
    inv = np.empty(M + 1)
    for r in range(1, M + 1):
        inv[r] = (r / M) ** (-alpha)
    best = 0.0
    for i in range(M):
        for j in range(i + 1, M + 1):
            s = 0.0
            for a in range(d):
                z = v[j, a] - v[i, a]
                s += z * z
            q = np.sqrt(s) * inv[j - i]
            if q > best:
                best = q
    return best
