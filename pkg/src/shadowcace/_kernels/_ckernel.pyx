# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GMM kernel over collapsed cells (logistic link only).

Statement-for-statement port of ``_pykernel``; keep the two in sync.
"""

import numpy as np

from libc.math cimport exp, sqrt, isfinite, INFINITY

cdef double CLAMP = 500.0
cdef double ARMIJO = 1e-4
cdef double MIN_STEP = 1e-20


cdef void _moments(double al, double be, double ga,
                   const double[::1] y, const long long[::1] a,
                   const long long[::1] z, const long long[::1] r,
                   const double[::1] w, double* g, double* jac) noexcept nogil:
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double t, e, b, d, wb, wd, yi, ai
    cdef long long zi, aii
    cdef int jz, ja
    for i in range(4):
        g[i] = 0.0
    for i in range(12):
        jac[i] = 0.0
    for i in range(n):
        yi = y[i]
        aii = a[i]
        ai = <double>aii
        zi = z[i]
        if r[i]:
            t = al + be * yi + ga * ai
            if t > CLAMP:
                t = CLAMP
            elif t < -CLAMP:
                t = -CLAMP
            e = exp(-t)
            b = e
            d = -e
        else:
            b = -1.0
            d = 0.0
        wb = w[i] * b
        g[zi] += wb
        g[2 + aii] += wb
        if d != 0.0:
            wd = w[i] * d
            jz = 3 * <int>zi
            ja = 3 * (2 + <int>aii)
            jac[jz] += wd
            jac[jz + 1] += wd * yi
            jac[jz + 2] += wd * ai
            jac[ja] += wd
            jac[ja + 1] += wd * yi
            jac[ja + 2] += wd * ai


cdef double _objective(double* x, const double[::1] y, const long long[::1] a,
                       const long long[::1] z, const long long[::1] r,
                       const double[::1] w, const double[:, ::1] W,
                       int* free, double* grad) noexcept nogil:
    cdef double g[4]
    cdef double jac[12]
    cdef double wg[4]
    cdef double f, s
    cdef int i, k
    _moments(x[0], x[1], x[2], y, a, z, r, w, g, jac)
    for i in range(4):
        wg[i] = W[i, 0] * g[0] + W[i, 1] * g[1] + W[i, 2] * g[2] + W[i, 3] * g[3]
    f = g[0] * wg[0] + g[1] * wg[1] + g[2] * wg[2] + g[3] * wg[3]
    for k in range(3):
        grad[k] = 0.0
        if free[k]:
            s = 0.0
            for i in range(4):
                s += jac[3 * i + k] * wg[i]
            grad[k] = 2.0 * s
    return f


def _as_cells(y, a, z, r, w):
    return (np.ascontiguousarray(y, dtype=np.float64),
            np.ascontiguousarray(a, dtype=np.int64),
            np.ascontiguousarray(z, dtype=np.int64),
            np.ascontiguousarray(r, dtype=np.int64),
            np.ascontiguousarray(w, dtype=np.float64))


def moments(theta, y, a, z, r, w, link=None):
    """Return ``(gbar, jacobian)`` as numpy arrays of shape (4,) and (4, 3)."""
    if link is not None:
        raise ValueError("compiled kernel supports the logistic link only")
    cdef double[::1] yv, wv
    cdef long long[::1] av, zv, rv
    yv, av, zv, rv, wv = _as_cells(y, a, z, r, w)
    cdef double g[4]
    cdef double jac[12]
    _moments(float(theta[0]), float(theta[1]), float(theta[2]), yv, av, zv, rv, wv, g, jac)
    return (np.array([g[i] for i in range(4)]),
            np.array([jac[i] for i in range(12)]).reshape(4, 3))


def objective(theta, y, a, z, r, w, W, link=None):
    """Return ``(Q, gradient)`` for the quadratic form ``g' W g``."""
    if link is not None:
        raise ValueError("compiled kernel supports the logistic link only")
    cdef double[::1] yv, wv
    cdef long long[::1] av, zv, rv
    yv, av, zv, rv, wv = _as_cells(y, a, z, r, w)
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef double x[3]
    cdef double grad[3]
    cdef int free[3]
    cdef int k
    for k in range(3):
        x[k] = float(theta[k])
        free[k] = 1
    f = _objective(x, yv, av, zv, rv, wv, Wv, free, grad)
    return f, np.array([grad[0], grad[1], grad[2]])


def minimize(theta0, y, a, z, r, w, W, free, double gtol, int max_iter, link=None):
    """BFGS with Armijo backtracking on ``Q(theta) = g' W g``.

    Returns ``(theta, Q, grad_norm, iterations, converged)``.
    """
    if link is not None:
        raise ValueError("compiled kernel supports the logistic link only")
    cdef double[::1] yv, wv
    cdef long long[::1] av, zv, rv
    yv, av, zv, rv, wv = _as_cells(y, a, z, r, w)
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef int fr[3]
    cdef double x[3]
    cdef double xn[3]
    cdef double g[3]
    cdef double gn[3]
    cdef double p[3]
    cdef double s[3]
    cdef double yd[3]
    cdef double hy[3]
    cdef double hinv[3][3]
    cdef double f, fn, gnorm, slope, step, sy, rho, yhy, c
    cdef int i, j, it = 0
    cdef bint converged
    for i in range(3):
        fr[i] = 1 if free[i] else 0
        x[i] = float(theta0[i])
    with nogil:
        f = _objective(x, yv, av, zv, rv, wv, Wv, fr, g)
    if not isfinite(f):
        return np.array([x[0], x[1], x[2]]), f, INFINITY, 0, False
    for i in range(3):
        for j in range(3):
            hinv[i][j] = 1.0 if i == j else 0.0
    gnorm = sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    converged = gnorm <= gtol
    with nogil:
        while not converged and it < max_iter:
            for i in range(3):
                p[i] = -(hinv[i][0] * g[0] + hinv[i][1] * g[1] + hinv[i][2] * g[2])
            slope = p[0] * g[0] + p[1] * g[1] + p[2] * g[2]
            if slope >= 0.0:
                for i in range(3):
                    for j in range(3):
                        hinv[i][j] = 1.0 if i == j else 0.0
                    p[i] = -g[i]
                slope = -(gnorm * gnorm)
            step = 1.0
            while True:
                for i in range(3):
                    xn[i] = x[i] + step * p[i]
                fn = _objective(xn, yv, av, zv, rv, wv, Wv, fr, gn)
                if isfinite(fn) and fn <= f + ARMIJO * step * slope:
                    break
                step *= 0.5
                if step < MIN_STEP:
                    break
            if step < MIN_STEP:
                break
            it += 1
            for i in range(3):
                s[i] = xn[i] - x[i]
                yd[i] = gn[i] - g[i]
            sy = s[0] * yd[0] + s[1] * yd[1] + s[2] * yd[2]
            if sy > 1e-300:
                rho = 1.0 / sy
                for i in range(3):
                    hy[i] = hinv[i][0] * yd[0] + hinv[i][1] * yd[1] + hinv[i][2] * yd[2]
                yhy = yd[0] * hy[0] + yd[1] * hy[1] + yd[2] * hy[2]
                c = (1.0 + rho * yhy) * rho
                for i in range(3):
                    for j in range(3):
                        hinv[i][j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j])
            for i in range(3):
                x[i] = xn[i]
                g[i] = gn[i]
            f = fn
            gnorm = sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
            converged = gnorm <= gtol
    return np.array([x[0], x[1], x[2]]), f, gnorm, it, bool(converged)
