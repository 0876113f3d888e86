"""Compiled inner loops. Everything here works on plain float arrays."""
import math

import numpy as np
from numba import njit

RENORM_EVERY = 16
TWO_PI = 2.0 * math.pi


@njit(cache=True)
def schrodinger_product(E, c, M, log_scale, counter):
    """Left-multiply M by A(c_j) = [[E+2-c_j, -1], [1, 0]] for every j, renormalising.

    Returns (M, log_scale, counter); ``counter`` carries the step count modulo the
    renormalisation period across chunk boundaries.
    """
    m00, m01, m10, m11 = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
    for j in range(c.shape[0]):
        a = E + 2.0 - c[j]
        n00 = a * m00 - m10
        n01 = a * m01 - m11
        m10 = m00
        m11 = m01
        m00 = n00
        m01 = n01
        counter += 1
        if counter == RENORM_EVERY:
            counter = 0
            s = math.sqrt(m00 * m00 + m01 * m01 + m10 * m10 + m11 * m11)
            m00 /= s
            m01 /= s
            m10 /= s
            m11 /= s
            log_scale += math.log(s)
    out = np.empty((2, 2))
    out[0, 0] = m00
    out[0, 1] = m01
    out[1, 0] = m10
    out[1, 1] = m11
    return out, log_scale, counter


@njit(cache=True)
def schrodinger_qr(E, c, q00, q01, q10, q11, log_r11, log_r22):
    """Advance A_n = Q R by Gram-Schmidt on A(c_j) Q; log r11, log r22 accumulate.

    det A_n = det Q * exp(log_r11 + log_r22) without the cancellation that a
    nearly rank-one explicit product suffers.
    """
    for j in range(c.shape[0]):
        a = E + 2.0 - c[j]
        b00 = a * q00 - q10
        b10 = q00
        b01 = a * q01 - q11
        b11 = q01
        r11 = math.hypot(b00, b10)
        q00 = b00 / r11
        q10 = b10 / r11
        r12 = q00 * b01 + q10 * b11
        b01 -= r12 * q00
        b11 -= r12 * q10
        r22 = math.hypot(b01, b11)
        q01 = b01 / r22
        q11 = b11 / r22
        log_r11 += math.log(r11)
        log_r22 += math.log(r22)
    return q00, q01, q10, q11, log_r11, log_r22


@njit(cache=True)
def _lifted_increment(x, y, nx, ny, floor):
    d = math.atan2(x * ny - y * nx, x * nx + y * ny)
    if d < floor:
        d += TWO_PI
    elif d >= floor + TWO_PI:
        d -= TWO_PI
    return d


@njit(cache=True)
def schrodinger_rotation(E, c, v, floor):
    """Sum of lifted angle increments of v -> A(c_j) v; returns (total, v)."""
    x, y = v[0], v[1]
    total = 0.0
    for j in range(c.shape[0]):
        a = E + 2.0 - c[j]
        nx = a * x - y
        ny = x
        total += _lifted_increment(x, y, nx, ny, floor)
        s = math.sqrt(nx * nx + ny * ny)
        x = nx / s
        y = ny / s
    out = np.empty(2)
    out[0] = x
    out[1] = y
    return total, out


@njit(cache=True)
def matrix_rotation(mats, v, floor):
    """Same as schrodinger_rotation for an explicit sequence of 2x2 matrices."""
    x, y = v[0], v[1]
    total = 0.0
    for j in range(mats.shape[0]):
        nx = mats[j, 0, 0] * x + mats[j, 0, 1] * y
        ny = mats[j, 1, 0] * x + mats[j, 1, 1] * y
        total += _lifted_increment(x, y, nx, ny, floor)
        s = math.sqrt(nx * nx + ny * ny)
        x = nx / s
        y = ny / s
    out = np.empty(2)
    out[0] = x
    out[1] = y
    return total, out


@njit(cache=True)
def sturm_count(diag, E):
    """Eigenvalues strictly below E of tridiag(1, diag, 1)."""
    count = 0
    q = 1.0
    tiny = 1e-300
    for i in range(diag.shape[0]):
        if i == 0:
            q = diag[0] - E
        else:
            q = (diag[i] - E) - 1.0 / q
        if q == 0.0:
            q = tiny
        if q < 0.0:
            count += 1
    return count


@njit(cache=True)
def bisect_top_eigenvalue(diag, lo, hi, tol):
    """Largest eigenvalue of tridiag(1, diag, 1) bracketed in [lo, hi]."""
    n = diag.shape[0]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if sturm_count(diag, mid) < n:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def ratio_recursion(a, r_seed):
    """Backward continued fraction r(j-1) = 1/(a(j) - r(j)) for the decaying solution.

    ``a`` holds E + 2 - c(n) for n = n_lo .. n_hi (inclusive); r(j) = phi(j+1)/phi(j).
    Returns r(n_lo - 1 .. n_hi) with r_seed placed at the last slot; a nonpositive
    denominator is returned as NaN from that point on.
    """
    m = a.shape[0]
    r = np.empty(m + 1)
    r[m] = r_seed
    bad = False
    for j in range(m - 1, -1, -1):
        if bad:
            r[j] = np.nan
            continue
        den = a[j] - r[j + 1]
        if den <= 0.0:
            bad = True
            r[j] = np.nan
        else:
            r[j] = 1.0 / den
    return r


@njit(cache=True)
def _kpp_rhs(u, c, left, right, out):
    n = u.shape[0]
    for j in range(n):
        ul = u[j - 1] if j > 0 else left
        ur = u[j + 1] if j < n - 1 else right
        out[j] = ul + ur - 2.0 * u[j] + c[j] * u[j] * (1.0 - u[j])


@njit(cache=True)
def kpp_rk4(u, c, left, right, dt, nsteps, lo, hi):
    """Classical RK4 for the lattice KPP system with frozen ghost values.

    Returns (u, bad_site, bad_step); bad_site is -1 when u stayed in [lo, hi].
    """
    n = u.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    w = np.empty(n)
    u = u.copy()
    for s in range(nsteps):
        _kpp_rhs(u, c, left, right, k1)
        for j in range(n):
            w[j] = u[j] + 0.5 * dt * k1[j]
        _kpp_rhs(w, c, left, right, k2)
        for j in range(n):
            w[j] = u[j] + 0.5 * dt * k2[j]
        _kpp_rhs(w, c, left, right, k3)
        for j in range(n):
            w[j] = u[j] + dt * k3[j]
        _kpp_rhs(w, c, left, right, k4)
        for j in range(n):
            u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not (u[j] >= lo and u[j] <= hi):
                return u, j, s
    return u, -1, nsteps
