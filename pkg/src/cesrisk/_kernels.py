"""Row-wise CES kernel in log space, with a numba path and a numpy fallback.

For weights ``c`` (summing to one, possibly signed) and log-inputs ``l`` the
kernel returns, per observation,

    G     = (1/r) * ln(sum_j c_j * exp(r * l_j))      (sum_j c_j l_j as r -> 0)
    dG/dr = sum_j c_j (l_j - G)^2 psi(r (l_j - G))
    E_j   = (l_j - G) * exprel(r (l_j - G))

with ``psi(z) = (z e^z - e^z + 1) / z^2`` and ``exprel(z) = (e^z - 1) / z``.
Both helper functions are evaluated with series expansions near zero, so every
output is smooth through r = 0. ``E`` gives the parameter derivatives:

    dG/dc_m - dG/dc_K = E_m - E_K        (affine weights, c_K eliminated)
    sum_j dG/dc_j c_j (delta_jm - c_m) = c_m E_m   (softmax shares)

and the input derivative ``dG/dl_j = c_j * exp(z_j) = c_j (1 + r E_j)``.

Set ``CESRISK_DISABLE_NUMBA=1`` to force the numpy path.
"""

import os

import numpy as np

CD_SWITCH = 1e-8
# rows with max |r*l| below this use the expm1/log1p path (no overflow possible)
_LOG1P_BAND = 0.5
_PSI_SERIES = 1e-2
_EXPREL_SERIES = 1e-5

_DISABLED = os.environ.get("CESRISK_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("disabled by CESRISK_DISABLE_NUMBA")
    import numba as _nb
except ImportError:
    _nb = None

BACKEND = "numba" if _nb is not None else "numpy"


def _psi_np(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < _PSI_SERIES
    zs = z[small]
    out[small] = 0.5 + zs * (1.0 / 3.0 + zs * (0.125 + zs * (1.0 / 30.0 + zs / 144.0)))
    zl = z[~small]
    out[~small] = (zl * np.exp(zl) - np.expm1(zl)) / (zl * zl)
    return out


def _exprel_np(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < _EXPREL_SERIES
    zs = z[small]
    out[small] = 1.0 + zs * (0.5 + zs / 6.0)
    zl = z[~small]
    out[~small] = np.expm1(zl) / zl
    return out


def ces_log_kernel_numpy(logx, r, c):
    logx = np.ascontiguousarray(logx, dtype=float)
    c = np.asarray(c, dtype=float)
    n = logx.shape[0]
    ok = np.ones(n, dtype=bool)
    if abs(r) < CD_SWITCH:
        G = logx @ c
    else:
        rl = r * logx
        G = np.empty(n)
        near = np.max(np.abs(rl), axis=1) < _LOG1P_BAND
        if near.any():
            s1 = np.expm1(rl[near]) @ c
            good = s1 > -1.0
            k = np.full(s1.shape, np.nan)
            k[good] = np.log1p(s1[good])
            G[near] = k / r
            ok[near] = good
        far = ~near
        if far.any():
            rf = rl[far]
            m = rf.max(axis=1)
            t = np.exp(rf - m[:, None]) @ c
            good = t > 0.0
            k = np.full(t.shape, np.nan)
            k[good] = m[good] + np.log(t[good])
            G[far] = k / r
            ok[far] = good
    d = logx - G[:, None]
    z = r * d
    E = d * _exprel_np(z)
    dG_dr = (c * d * d * _psi_np(z)).sum(axis=1)
    return G, dG_dr, E, ok


if _nb is not None:

    @_nb.njit(cache=True)
    def _psi_nb(z):
        if abs(z) < _PSI_SERIES:
            return 0.5 + z * (1.0 / 3.0 + z * (0.125 + z * (1.0 / 30.0 + z / 144.0)))
        return (z * np.exp(z) - np.expm1(z)) / (z * z)

    @_nb.njit(cache=True)
    def _exprel_nb(z):
        if abs(z) < _EXPREL_SERIES:
            return 1.0 + z * (0.5 + z / 6.0)
        return np.expm1(z) / z

    @_nb.njit(cache=True)
    def _ces_log_kernel_nb(logx, r, c):
        n, k = logx.shape
        G = np.empty(n)
        dG_dr = np.empty(n)
        E = np.empty((n, k))
        ok = np.ones(n, dtype=np.bool_)
        cd = abs(r) < CD_SWITCH
        for t in range(n):
            if cd:
                g = 0.0
                for j in range(k):
                    g += c[j] * logx[t, j]
            else:
                big = 0.0
                m = r * logx[t, 0]
                for j in range(k):
                    v = r * logx[t, j]
                    if abs(v) > big:
                        big = abs(v)
                    if v > m:
                        m = v
                if big < _LOG1P_BAND:
                    s1 = 0.0
                    for j in range(k):
                        s1 += c[j] * np.expm1(r * logx[t, j])
                    if s1 > -1.0:
                        g = np.log1p(s1) / r
                    else:
                        g = np.nan
                        ok[t] = False
                else:
                    s = 0.0
                    for j in range(k):
                        s += c[j] * np.exp(r * logx[t, j] - m)
                    if s > 0.0:
                        g = (m + np.log(s)) / r
                    else:
                        g = np.nan
                        ok[t] = False
            G[t] = g
            acc = 0.0
            for j in range(k):
                d = logx[t, j] - g
                z = r * d
                E[t, j] = d * _exprel_nb(z)
                acc += c[j] * d * d * _psi_nb(z)
            dG_dr[t] = acc
        return G, dG_dr, E, ok

    def ces_log_kernel_numba(logx, r, c):
        return _ces_log_kernel_nb(
            np.ascontiguousarray(logx, dtype=np.float64),
            float(r),
            np.ascontiguousarray(c, dtype=np.float64),
        )

    ces_log_kernel = ces_log_kernel_numba
else:
    ces_log_kernel_numba = None
    ces_log_kernel = ces_log_kernel_numpy
