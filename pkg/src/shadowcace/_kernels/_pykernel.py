"""Pure-Python GMM kernel over collapsed cells.

Mirrors ``_ckernel.pyx`` statement for statement so both backends follow the
same floating-point path. Works on plain Python floats: with at most a few
dozen cells this beats small-array numpy calls.
"""

import math

import numpy as np

CLAMP = 500.0
ARMIJO = 1e-4
MIN_STEP = 1e-20


def _moments(al, be, ga, cells, link):
    """Sample moments (4) and their Jacobian (4x3, flattened row-major)."""
    g = [0.0, 0.0, 0.0, 0.0]
    jac = [0.0] * 12
    for y, a, z, r, w in cells:
        if r:
            t = al + be * y + ga * a
            if t > CLAMP:
                t = CLAMP
            elif t < -CLAMP:
                t = -CLAMP
            if link is None:
                # logistic: 1/psi(t) - 1 = exp(-t)
                e = math.exp(-t)
                b = e
                d = -e
            else:
                p = float(link.psi(t))
                b = 1.0 / p - 1.0
                d = -float(link.dpsi(t)) / (p * p)
        else:
            b = -1.0
            d = 0.0
        wb = w * b
        g[z] += wb
        g[2 + a] += wb
        if d != 0.0:
            wd = w * d
            jz = 3 * z
            ja = 3 * (2 + a)
            jac[jz] += wd
            jac[jz + 1] += wd * y
            jac[jz + 2] += wd * a
            jac[ja] += wd
            jac[ja + 1] += wd * y
            jac[ja + 2] += wd * a
    return g, jac


def _objective(x, cells, W, free, link):
    g, jac = _moments(x[0], x[1], x[2], cells, link)
    wg = [W[i][0] * g[0] + W[i][1] * g[1] + W[i][2] * g[2] + W[i][3] * g[3]
          for i in range(4)]
    f = g[0] * wg[0] + g[1] * wg[1] + g[2] * wg[2] + g[3] * wg[3]
    grad = [0.0, 0.0, 0.0]
    for k in range(3):
        if free[k]:
            s = 0.0
            for i in range(4):
                s += jac[3 * i + k] * wg[i]
            grad[k] = 2.0 * s
    return f, grad


def _pack(y, a, z, r, w):
    return list(zip(
        [float(v) for v in y], [int(v) for v in a], [int(v) for v in z],
        [int(v) for v in r], [float(v) for v in w],
    ))


def moments(theta, y, a, z, r, w, link=None):
    """Return ``(gbar, jacobian)`` as numpy arrays of shape (4,) and (4, 3)."""
    g, jac = _moments(float(theta[0]), float(theta[1]), float(theta[2]),
                      _pack(y, a, z, r, w), link)
    return np.array(g), np.array(jac).reshape(4, 3)


def objective(theta, y, a, z, r, w, W, link=None):
    """Return ``(Q, gradient)`` for the quadratic form ``g' W g``."""
    Wl = [[float(v) for v in row] for row in np.asarray(W)]
    f, grad = _objective([float(v) for v in theta], _pack(y, a, z, r, w), Wl,
                         [1, 1, 1], link)
    return f, np.array(grad)


def minimize(theta0, y, a, z, r, w, W, free, gtol, max_iter, link=None):
    """BFGS with Armijo backtracking on ``Q(theta) = g' W g``.

    Coordinates with ``free[k] == 0`` stay at their start value.

    Returns ``(theta, Q, grad_norm, iterations, converged)``.
    """
    cells = _pack(y, a, z, r, w)
    Wl = [[float(v) for v in row] for row in np.asarray(W)]
    fr = [1 if v else 0 for v in free]
    x = [float(v) for v in theta0]
    f, g = _objective(x, cells, Wl, fr, link)
    if not math.isfinite(f):
        return np.array(x), f, math.inf, 0, False
    hinv = [[1.0 if i == j else 0.0 for j in range(3)] for i in range(3)]
    it = 0
    gnorm = math.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    converged = gnorm <= gtol
    while not converged and it < max_iter:
        p = [-(hinv[i][0] * g[0] + hinv[i][1] * g[1] + hinv[i][2] * g[2]) for i in range(3)]
        slope = p[0] * g[0] + p[1] * g[1] + p[2] * g[2]
        if slope >= 0.0:
            hinv = [[1.0 if i == j else 0.0 for j in range(3)] for i in range(3)]
            p = [-g[0], -g[1], -g[2]]
            slope = -(gnorm * gnorm)
        step = 1.0
        while True:
            xn = [x[0] + step * p[0], x[1] + step * p[1], x[2] + step * p[2]]
            fn, gn = _objective(xn, cells, Wl, fr, link)
            if math.isfinite(fn) and fn <= f + ARMIJO * step * slope:
                break
            step *= 0.5
            if step < MIN_STEP:
                break
        if step < MIN_STEP:
            break
        it += 1
        s = [xn[0] - x[0], xn[1] - x[1], xn[2] - x[2]]
        yv = [gn[0] - g[0], gn[1] - g[1], gn[2] - g[2]]
        sy = s[0] * yv[0] + s[1] * yv[1] + s[2] * yv[2]
        if sy > 1e-300:
            # H+ = (I - rho s y') H (I - rho y s') + rho s s'
            rho = 1.0 / sy
            hy = [hinv[i][0] * yv[0] + hinv[i][1] * yv[1] + hinv[i][2] * yv[2] for i in range(3)]
            yhy = yv[0] * hy[0] + yv[1] * hy[1] + yv[2] * hy[2]
            c = (1.0 + rho * yhy) * rho
            for i in range(3):
                for j in range(3):
                    hinv[i][j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j])
        x, f, g = xn, fn, gn
        gnorm = math.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
        converged = gnorm <= gtol
    return np.array(x), f, gnorm, it, converged
