"""Compiled inner loop of the Jacobi alignment.

All functions operate on plain arrays and floats so that numba can compile
them; :mod:`sobalign.align` wraps them with validation and result types.
"""
import math

import numpy as np
from numba import njit

ROOT_IMAG_TOL = 1e-8
TIE_TOL = 1e-12
REORTHO_EVERY = 20
LEAD_TOL = 1e-13
SNAP_TOL = 1e-12
SPLIT_ROOT_TOL = 1e-4


@njit(cache=True)
def plane_coeffs(B, T, M, lam, p, q):
    """Coefficients ``(k0..k4)`` of ``lam tr(B^T G^T T G) + tr(M G)`` in ``(c, s)``."""
    n = B.shape[0]
    Bpp, Bpq, Bqp, Bqq = B[p, p], B[p, q], B[q, p], B[q, q]
    Tpp, Tpq, Tqp, Tqq = T[p, p], T[p, q], T[q, p], T[q, q]
    cc = Bpp * Tpp + Bpq * Tpq + Bqp * Tqp + Bqq * Tqq
    ss = Bqq * Tpp - Bqp * Tpq - Bpq * Tqp + Bpp * Tqq
    cs = (Bpq * Tpp - Bpp * Tpq + Bqq * Tqp - Bqp * Tqq) + (Bqp * Tpp - Bpp * Tqp + Bqq * Tpq - Bpq * Tqq)
    c1 = -2.0 * cc
    s1 = -cs
    for i in range(n):
        c1 += B[i, p] * T[i, p] + B[i, q] * T[i, q] + B[p, i] * T[p, i] + B[q, i] * T[q, i]
        s1 += B[i, q] * T[i, p] - B[i, p] * T[i, q] + B[q, i] * T[p, i] - B[p, i] * T[q, i]
    return (
        lam * cc,
        lam * ss,
        lam * cs,
        lam * c1 + M[p, p] + M[q, q],
        lam * s1 + M[q, p] - M[p, q],
    )


@njit(cache=True)
def quartic_coeffs(k0, k1, k2, k3, k4):
    d = k1 - k0
    out = np.empty(5)
    out[0] = -4.0 * (d * d + k2 * k2)
    out[1] = -4.0 * (k4 * d + k2 * k3)
    out[2] = 4.0 * d * d + 4.0 * k2 * k2 - k4 * k4 - k3 * k3
    out[3] = 2.0 * (2.0 * k4 * d + k2 * k3)
    out[4] = k4 * k4 - k2 * k2
    return out


@njit(cache=True)
def real_roots(coeffs):
    """Real roots clipped to [-1, 1], via eigenvalues of the companion matrix.

    Roots count as real when their imaginary part is at most
    ``ROOT_IMAG_TOL``, or at most ``SPLIT_ROOT_TOL`` (relative) since a
    double root comes out of the eigensolver as a pair with imaginary
    parts near the square root of machine epsilon. Leading coefficients
    below ``LEAD_TOL`` relative to the largest one are dropped; they only
    carry roots far outside the unit interval. Each
    root gets one Newton step, and roots within ``SNAP_TOL`` of +-1 are
    snapped onto the boundary candidates.
    """
    scale = 0.0
    for x in coeffs:
        scale = max(scale, abs(x))
    start = 0
    while start < coeffs.size and abs(coeffs[start]) <= LEAD_TOL * scale:
        start += 1
    deg = coeffs.size - 1 - start
    if deg < 1:
        return np.empty(0)
    comp = np.zeros((deg, deg), dtype=np.complex128)
    for j in range(deg):
        comp[0, j] = -coeffs[start + 1 + j] / coeffs[start]
    for i in range(1, deg):
        comp[i, i - 1] = 1.0
    ev = np.linalg.eigvals(comp)
    out = np.empty(deg)
    m = 0
    for r in ev:
        # Nearly real pairs are a multiple root split by roundoff; keeping
        # their real parts only adds candidates, all of which get scored.
        if abs(r.imag) <= ROOT_IMAG_TOL or abs(r.imag) <= SPLIT_ROOT_TOL * max(1.0, abs(r)):
            x = r.real
            f, df = 0.0, 0.0
            for c in coeffs[start:]:
                df = df * x + f
                f = f * x + c
            if df != 0.0:
                step = f / df
                if abs(step) <= 1e-6 * max(1.0, abs(x)):
                    x -= step
            x = min(1.0, max(-1.0, x))
            if 1.0 - abs(x) <= SNAP_TOL:
                x = 1.0 if x > 0 else -1.0
            out[m] = x
            m += 1
    return out[:m]


@njit(cache=True)
def maximize_on_circle(k0, k1, k2, k3, k4):
    """Maximizer of ``k0 c^2 + k1 s^2 + k2 cs + k3 c + k4 s`` on the unit circle.

    Candidates: ``s = 0``, ``s = +-1`` and the real quartic roots, each with
    both signs of ``c``. Ties within ``TIE_TOL`` go to the smallest ``|s|``,
    then to positive ``c``.
    """
    roots = real_roots(quartic_coeffs(k0, k1, k2, k3, k4))
    ns = 3 + roots.size
    svals = np.empty(ns)
    svals[0], svals[1], svals[2] = 0.0, 1.0, -1.0
    svals[3:] = roots
    vals = np.empty(2 * ns)
    cvals = np.empty(2 * ns)
    best = -np.inf
    for i in range(ns):
        s = svals[i]
        c = math.sqrt(max(1.0 - s * s, 0.0))
        for h in range(2):
            cc = c if h == 0 else -c
            v = k0 * cc * cc + k1 * s * s + k2 * cc * s + k3 * cc + k4 * s
            vals[2 * i + h] = v
            cvals[2 * i + h] = cc
            if v > best:
                best = v
    bc, bs = 1.0, 0.0
    first = True
    for j in range(2 * ns):
        if vals[j] >= best - TIE_TOL:
            c, s = cvals[j], svals[j // 2]
            if first or abs(s) < abs(bs) or (abs(s) == abs(bs) and c > bc):
                bc, bs = c, s
                first = False
    return bc, bs


@njit(cache=True)
def _rot_cols(X, p, q, c, s):
    for i in range(X.shape[0]):
        xp, xq = X[i, p], X[i, q]
        X[i, p] = c * xp - s * xq
        X[i, q] = s * xp + c * xq


@njit(cache=True)
def _rot_rows(X, p, q, c, s):
    for j in range(X.shape[1]):
        xp, xq = X[p, j], X[q, j]
        X[p, j] = c * xp - s * xq
        X[q, j] = s * xp + c * xq


@njit(cache=True)
def _rho(B, T, Mt, lam):
    n = B.shape[0]
    a = 0.0
    tr = 0.0
    for i in range(n):
        tr += Mt[i, i]
        for j in range(n):
            a += B[i, j] * T[i, j]
    return lam * a + tr


@njit(cache=True)
def _polar(Q):
    U, _, Vt = np.linalg.svd(Q)
    return U @ Vt


@njit(cache=True)
def sweeps(B, A2, M, lam, Q0, planes, orders, tol):
    """Run Jacobi sweeps from ``Q0``; ``orders[k]`` is the plane order of sweep ``k``.

    Returns ``(Q, rho_trace, plane_trace, n_sweeps, converged)``; the traces
    hold the directly evaluated rho, starting with the initial value.
    """
    max_sweeps, n_planes = orders.shape
    Q = Q0.copy()
    T = Q.T @ A2 @ Q
    Mt = M @ Q
    r = _rho(B, T, Mt, lam)
    rho_trace = np.empty(max_sweeps + 1)
    plane_trace = np.empty(max_sweeps * n_planes + 1)
    rho_trace[0] = r
    plane_trace[0] = r
    m = 1
    converged = False
    k = 0
    while k < max_sweeps:
        r_start = r
        for idx in orders[k]:
            p, q = planes[idx, 0], planes[idx, 1]
            k0, k1, k2, k3, k4 = plane_coeffs(B, T, Mt, lam, p, q)
            c, s = maximize_on_circle(k0, k1, k2, k3, k4)
            if s != 0.0 or c != 1.0:
                _rot_cols(T, p, q, c, s)
                _rot_rows(T, p, q, c, s)
                _rot_cols(Mt, p, q, c, s)
                _rot_cols(Q, p, q, c, s)
                r = _rho(B, T, Mt, lam)
            plane_trace[m] = r
            m += 1
        k += 1
        if k % REORTHO_EVERY == 0:
            Q = _polar(Q)
            T = Q.T @ A2 @ Q
            Mt = M @ Q
            r = _rho(B, T, Mt, lam)
        rho_trace[k] = r
        if r - r_start <= tol * max(1.0, abs(r_start)):
            converged = True
            break
    return Q, rho_trace[: k + 1], plane_trace[:m], k, converged
