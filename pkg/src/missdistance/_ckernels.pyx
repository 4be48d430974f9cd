# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: polar-trapezoid disk integral and planar profile pivots.

Semantics match ``_kernels_py``; only the loop structure differs.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, erfc, cos, sin, atan2, hypot, log, fabs, fmod, M_PI, NAN, isfinite

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI
cdef double SQRT2 = 1.4142135623730951
cdef double TINY_PROB = 1e-300
cdef int LAMBDA_GRID = 32


cdef inline double _normal_mass(double lower, double upper) nogil:
    if lower > 0:
        return 0.5 * (erfc(lower / SQRT2) - erfc(upper / SQRT2))
    return 0.5 * (erfc(-upper / SQRT2) - erfc(-lower / SQRT2))


cdef inline double _ray(double theta, double cx, double cy, double v1, double v2, double R) nogil:
    cdef double ct = cos(theta), st = sin(theta)
    cdef double a = ct * ct / v1 + st * st / v2
    cdef double b = cx * ct / v1 + cy * st / v2
    cdef double k = cx * cx / v1 + cy * cy / v2
    cdef double m = b / a
    cdef double sa = sqrt(a)
    cdef double perp = k - b * m
    if perp < 0:
        perp = 0
    cdef double t1 = (exp(-0.5 * k) - exp(-0.5 * (a * R * R - 2.0 * b * R + k))) / a
    cdef double t2 = exp(-0.5 * perp) * m * sqrt(TWO_PI) / sa * _normal_mass(-sa * m, sa * (R - m))
    return t1 + t2


cdef double _pc_one(double cx, double cy, double v1, double v2, double R,
                    double tol, long max_nodes, long *used, int *conv) nogil:
    cdef long nodes = 8, j
    cdef double norm = 1.0 / (TWO_PI * sqrt(v1 * v2))
    cdef double total = 0, est, new
    for j in range(nodes):
        total += _ray(j * TWO_PI / nodes, cx, cy, v1, v2, R)
    est = total * (TWO_PI / nodes) * norm
    conv[0] = 0
    while nodes < max_nodes:
        for j in range(nodes):
            total += _ray((j + 0.5) * TWO_PI / nodes, cx, cy, v1, v2, R)
        nodes *= 2
        new = total * (TWO_PI / nodes) * norm
        if fabs(new - est) < tol:
            est = new
            conv[0] = 1
            break
        est = new
    used[0] = nodes
    if est < TINY_PROB:
        est = 0
    if est > 1:
        est = 1
    return est


def pc_disk_batch(cx, cy, var1, var2, double radius, double tol=1e-10, long max_nodes=1 << 20):
    cdef const double[::1] x = np.ascontiguousarray(np.atleast_1d(cx), dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(np.atleast_1d(cy), dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i
    cdef const double[::1] a = np.ascontiguousarray(np.broadcast_to(np.asarray(var1, float), (n,)))
    cdef const double[::1] b = np.ascontiguousarray(np.broadcast_to(np.asarray(var2, float), (n,)))
    out = np.empty(n)
    used = np.empty(n, dtype=np.int64)
    done = np.empty(n, dtype=np.int32)
    cdef double[::1] o = out
    cdef long[::1] u = used
    cdef int[::1] d = done
    cdef long nu
    cdef int cv
    with nogil:
        for i in range(n):
            o[i] = _pc_one(x[i], y[i], a[i], b[i], radius, tol, max_nodes, &nu, &cv)
            u[i] = nu
            d[i] = cv
    return out, used, done.astype(bool)


cdef inline double _objective(double lam, double x1, double x2, double v1, double v2, double psi) nogil:
    cdef double e1 = x1 - psi * cos(lam), e2 = x2 - psi * sin(lam)
    return e1 * e1 / v1 + e2 * e2 / v2


cdef inline void _slope(double lam, double x1, double x2, double v1, double v2, double psi,
                        double *h, double *dh) nogil:
    cdef double c = cos(lam), s = sin(lam)
    cdef double k = 1.0 / v2 - 1.0 / v1
    h[0] = x1 * s / v1 - x2 * c / v2 + psi * s * c * k
    dh[0] = x1 * c / v1 + x2 * s / v2 + psi * (c * c - s * s) * k


cdef double _profile_angle(double x1, double x2, double v1, double v2, double psi) nogil:
    cdef double lam_hat = atan2(x2, x1)
    if psi == 0:
        return lam_hat
    # the minimiser shares the quadrant of x, where the objective has a single stationary point
    cdef double base
    if x2 >= 0:
        base = 0.0 if x1 >= 0 else 0.5 * M_PI
    else:
        base = -0.5 * M_PI if x1 >= 0 else -M_PI
    cdef double step = 0.5 * M_PI / LAMBDA_GRID
    cdef double best = lam_hat, bestval = 1e308, lam, val
    cdef int j
    for j in range(LAMBDA_GRID):
        lam = base + (j + 0.5) * step
        val = _objective(lam, x1, x2, v1, v2, psi)
        if val < bestval:
            bestval = val
            best = lam
    cdef double lo = best - step, hi = best + step, h, dh, hlo, hhi, new
    _slope(lo, x1, x2, v1, v2, psi, &hlo, &dh)
    _slope(hi, x1, x2, v1, v2, psi, &hhi, &dh)
    cdef bint bracketed = hlo < 0 and hhi > 0
    lam = best
    for j in range(80):
        _slope(lam, x1, x2, v1, v2, psi, &h, &dh)
        if bracketed:
            if h < 0:
                lo = lam
            else:
                hi = lam
        new = lam - h / dh
        if bracketed and (not isfinite(new) or new <= lo or new >= hi or dh <= 0):
            new = 0.5 * (lo + hi)
        elif not isfinite(new):
            new = lam
        if fabs(new - lam) <= 1e-15 * (1.0 + fabs(new)):
            lam = new
            break
        lam = new
    lam = fmod(lam + M_PI, TWO_PI)
    if lam < 0:
        lam += TWO_PI
    return lam - M_PI


def profile_angle(x1, x2, var1, var2, psi):
    b = np.broadcast_arrays(*(np.asarray(v, float) for v in (x1, x2, var1, var2, psi)))
    shape = b[0].shape
    cdef const double[::1] X1 = np.ascontiguousarray(b[0]).ravel()
    cdef const double[::1] X2 = np.ascontiguousarray(b[1]).ravel()
    cdef const double[::1] V1 = np.ascontiguousarray(b[2]).ravel()
    cdef const double[::1] V2 = np.ascontiguousarray(b[3]).ravel()
    cdef const double[::1] P = np.ascontiguousarray(b[4]).ravel()
    cdef Py_ssize_t n = X1.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _profile_angle(X1[i], X2[i], V1[i], V2[i], P[i])
    return out.reshape(shape)


def planar_pivots_batch(x1, x2, var1, var2, psi, double r_min=1e-8):
    b = np.broadcast_arrays(*(np.asarray(v, float) for v in (x1, x2, var1, var2, psi)))
    shape = b[0].shape
    cdef const double[::1] X1 = np.ascontiguousarray(b[0]).ravel()
    cdef const double[::1] X2 = np.ascontiguousarray(b[1]).ravel()
    cdef const double[::1] V1 = np.ascontiguousarray(b[2]).ravel()
    cdef const double[::1] V2 = np.ascontiguousarray(b[3]).ravel()
    cdef const double[::1] P = np.ascontiguousarray(b[4]).ravel()
    cdef Py_ssize_t n = X1.shape[0], i
    lam_out = np.empty(n)
    w_out = np.empty(n)
    r_out = np.empty(n)
    q_out = np.empty(n)
    rs_out = np.empty(n)
    cdef double[::1] L = lam_out, W = w_out, R = r_out, Q = q_out, RS = rs_out
    cdef double lam, c, s, e1, e2, g, sgn, psi_hat, lh, cos2, den2, q, r, diff
    with nogil:
        for i in range(n):
            lam = _profile_angle(X1[i], X2[i], V1[i], V2[i], P[i])
            psi_hat = hypot(X1[i], X2[i])
            lh = atan2(X2[i], X1[i])
            c = cos(lam)
            s = sin(lam)
            e1 = X1[i] - P[i] * c
            e2 = X2[i] - P[i] * s
            g = e1 * e1 / V1[i] + e2 * e2 / V2[i]
            diff = psi_hat - P[i]
            sgn = 1.0 if diff > 0 else (-1.0 if diff < 0 else 0.0)
            r = sgn * sqrt(g)
            W[i] = diff / sqrt(V1[i] * cos(lh) * cos(lh) + V2[i] * sin(lh) * sin(lh))
            cos2 = c * c - s * s
            den2 = V2[i] * (X1[i] * c - P[i] * cos2) + V1[i] * (X2[i] * s + P[i] * cos2)
            q = sgn * sqrt(P[i]) * fabs(X1[i] * c + X2[i] * s - P[i]) / sqrt(den2)
            L[i] = lam
            R[i] = r
            Q[i] = q
            if fabs(r) < r_min:
                RS[i] = NAN
            else:
                RS[i] = r + log(q / r) / r
    return (lam_out.reshape(shape), w_out.reshape(shape), r_out.reshape(shape),
            q_out.reshape(shape), rs_out.reshape(shape))
