"""Pure-Python reference implementation of the hot loops.

Mirrors ``_kernels.pyx`` function for function; :mod:`hscs._core` picks the
compiled version when it is importable.
"""
from __future__ import annotations

import math

import numpy as np

# --- radial shooting -------------------------------------------------------


def _radial_rhs(u, z1, z2, a, p, m, lam):
    sh = math.sinh(u)
    w = sh ** (2 * m + 1)
    pot = m * (m + 1) + a * math.cosh(u) - p * p * sh * sh - lam
    return z2 / w, -w * pot * z1


def _rk4_path(a, p, m, lam, u_start, u_end, z1, z2, n):
    """RK4 on ``(G, sinh^{2m+1} G')`` with renormalization; returns end state and sign changes."""
    h = (u_end - u_start) / n
    u = u_start
    nodes = 0
    for _ in range(n):
        k1 = _radial_rhs(u, z1, z2, a, p, m, lam)
        k2 = _radial_rhs(u + 0.5 * h, z1 + 0.5 * h * k1[0], z2 + 0.5 * h * k1[1], a, p, m, lam)
        k3 = _radial_rhs(u + 0.5 * h, z1 + 0.5 * h * k2[0], z2 + 0.5 * h * k2[1], a, p, m, lam)
        k4 = _radial_rhs(u + h, z1 + h * k3[0], z2 + h * k3[1], a, p, m, lam)
        n1 = z1 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        n2 = z2 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if n1 * z1 < 0.0:
            nodes += 1
        z1, z2 = n1, n2
        big = max(abs(z1), abs(z2))
        if big > 1e100 or (0.0 < big < 1e-100):
            z1, z2 = z1 / big, z2 / big
        u += h
    return z1, z2, nodes


def shoot_radial(a, p, m, lam, xi_max, npts):
    """Normalized Wronskian mismatch and node count of the radial equation.

    Works with ``G = X / sinh^m u`` on ``xi = cosh u``:
    ``(sh^{2m+1} G')' + sh^{2m+1} (m(m+1) + a cosh u - p^2 sinh^2 u - lam) G = 0``.
    """
    u_max = math.acosh(xi_max)
    u0 = min(1e-3, 1e-3 * u_max)
    c2 = -(m * (m + 1) + a - lam) / (4.0 * (m + 1))
    z1 = 1.0 + c2 * u0 * u0
    z2 = math.sinh(u0) ** (2 * m + 1) * 2.0 * c2 * u0
    # match at the outer turning point of the effective potential, else mid-range
    grid = np.linspace(u0, u_max, 2001)
    pot = m * (m + 1) + a * np.cosh(grid) - p * p * np.sinh(grid) ** 2 - lam
    allowed = np.nonzero(pot > 0.0)[0]
    u_mid = grid[allowed[-1]] if allowed.size else 0.5 * (u0 + u_max)
    u_mid = min(max(u_mid, u0 + 0.05 * (u_max - u0)), u_max - 0.05 * (u_max - u0))
    n_out = max(int(npts * (u_mid - u0) / (u_max - u0)), 20)
    n_in = max(npts - n_out, 20)
    o1, o2, nodes_out = _rk4_path(a, p, m, lam, u0, u_mid, z1, z2, n_out)
    # inward start on the decaying branch: G'/G ~ sigma sinh/(cosh+1) - p sinh
    sigma = a / (2.0 * p) - m - 1.0
    sh = math.sinh(u_max)
    slope = sigma * sh / (math.cosh(u_max) + 1.0) - p * sh
    i1, i2, nodes_in = _rk4_path(a, p, m, lam, u_max, u_mid, 1.0, sh ** (2 * m + 1) * slope, n_in)
    wr = o1 * i2 - o2 * i1
    norm = math.hypot(o1, o2) * math.hypot(i1, i2)
    return wr / norm, nodes_out + nodes_in


# --- coupled-channel propagation -------------------------------------------

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


class _Spline:
    def __init__(self, knots, coef):
        self.knots = knots
        self.coef = coef  # (nseg, 4, N, N), highest power first

    def __call__(self, x):
        k = self.knots
        i = int(np.searchsorted(k, x, side="right")) - 1
        i = min(max(i, 0), k.size - 2)
        dx = x - k[i]
        c = self.coef[i]
        return ((c[0] * dx + c[1]) * dx + c[2]) * dx + c[3]


def propagate(knots, a_coef, b_coef, energy, centrifugal, rho_a, rho_b, Y, rtol=1e-10,
              h0=None, hmin=1e-12, max_steps=2_000_000):
    """Integrate ``g'' = A(rho) g + B(rho) g'`` as a first-order system from ``rho_a`` to ``rho_b``.

    ``A = spline_a + (centrifugal/rho^2 - energy) I`` and ``B = spline_b``. ``Y``
    holds ``[g; g']`` column-wise; columns are re-orthonormalized by QR after
    every accepted step, which keeps the spanned solution space but not
    the individual columns. Returns ``(Y, accepted, rejected, min_ratio, T, log_scale)``
    where ``min_ratio`` is the smallest ``|R_ii| / max|R_jj|`` encountered and
    the unnormalized propagation of the input equals ``Y @ T * exp(log_scale)``
    with ``T`` the accumulated upper-triangular factor.
    """
    A = _Spline(np.asarray(knots, float), np.asarray(a_coef, float))
    B = _Spline(np.asarray(knots, float), np.asarray(b_coef, float))
    Y = np.array(Y, dtype=float)
    n = Y.shape[0] // 2
    eye = np.eye(n)

    def f(x, y):
        g, dg = y[:n], y[n:]
        a = A(x) + (centrifugal / (x * x) - energy) * eye
        return np.vstack((dg, a @ g + B(x) @ dg))

    x = float(rho_a)
    span = float(rho_b) - x
    direction = 1.0 if span > 0 else -1.0
    h = direction * (abs(h0) if h0 else min(abs(span), 1e-3 * max(abs(x), 1e-3)))
    accepted = rejected = 0
    min_ratio = 1.0
    T = np.eye(Y.shape[1])
    log_scale = 0.0
    k1 = f(x, Y)
    while direction * (rho_b - x) > 0.0:
        if accepted + rejected > max_steps:
            raise RuntimeError("step budget exhausted")
        if direction * (x + h - rho_b) > 0.0:
            h = rho_b - x
        ks = [k1]
        for s in range(1, 7):
            yi = Y + h * sum(coef * ks[j] for j, coef in enumerate(_A[s]) if coef != 0.0)
            ks.append(f(x + _C[s] * h, yi))
        y5 = Y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        err_vec = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = max(1.0, float(np.max(np.abs(Y))), float(np.max(np.abs(y5))))
        err = float(np.max(np.abs(err_vec))) / (rtol * scale)
        if err <= 1.0 or abs(h) <= hmin:
            if abs(h) <= hmin and err > 1.0:
                raise FloatingPointError(f"step size underflow at rho={x:.6g}")
            x += h
            q, r = np.linalg.qr(y5)
            d = np.abs(np.diag(r))
            min_ratio = min(min_ratio, float(d.min() / d.max()))
            sg = np.sign(np.diag(r))
            Y = q * sg
            T = (sg[:, None] * r) @ T
            big = float(np.max(np.abs(T)))
            T /= big
            log_scale += math.log(big)
            k1 = f(x, Y)
            accepted += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            rejected += 1
            fac = max(0.2, 0.9 * err ** -0.2)
        h *= fac
    return Y, accepted, rejected, min_ratio, T, log_scale
