# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; semantics match ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sinh, cosh, acosh, fabs, sqrt, log, hypot, pow, fmin, fmax

cnp.import_array()


# --- radial shooting -------------------------------------------------------

cdef inline void _rhs(double u, double z1, double z2, double a, double p, int m, double lam,
                      double* d1, double* d2) noexcept nogil:
    cdef double sh = sinh(u)
    cdef double w = pow(sh, 2 * m + 1)
    cdef double pot = m * (m + 1) + a * cosh(u) - p * p * sh * sh - lam
    d1[0] = z2 / w
    d2[0] = -w * pot * z1


cdef void _rk4_path(double a, double p, int m, double lam, double u_start, double u_end,
                    double* z1, double* z2, int n, int* nodes) noexcept nogil:
    cdef double h = (u_end - u_start) / n
    cdef double u = u_start
    cdef double a1, a2, b1, b2, c1, c2, e1, e2, n1, n2, big
    cdef int i
    nodes[0] = 0
    for i in range(n):
        _rhs(u, z1[0], z2[0], a, p, m, lam, &a1, &a2)
        _rhs(u + 0.5 * h, z1[0] + 0.5 * h * a1, z2[0] + 0.5 * h * a2, a, p, m, lam, &b1, &b2)
        _rhs(u + 0.5 * h, z1[0] + 0.5 * h * b1, z2[0] + 0.5 * h * b2, a, p, m, lam, &c1, &c2)
        _rhs(u + h, z1[0] + h * c1, z2[0] + h * c2, a, p, m, lam, &e1, &e2)
        n1 = z1[0] + h / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + e1)
        n2 = z2[0] + h / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + e2)
        if n1 * z1[0] < 0.0:
            nodes[0] += 1
        z1[0] = n1
        z2[0] = n2
        big = fmax(fabs(n1), fabs(n2))
        if big > 1e100 or (0.0 < big < 1e-100):
            z1[0] = n1 / big
            z2[0] = n2 / big
        u += h


def shoot_radial(double a, double p, int m, double lam, double xi_max, int npts):
    cdef double u_max = acosh(xi_max)
    cdef double u0 = fmin(1e-3, 1e-3 * u_max)
    cdef double c2 = -(m * (m + 1) + a - lam) / (4.0 * (m + 1))
    cdef double o1 = 1.0 + c2 * u0 * u0
    cdef double o2 = pow(sinh(u0), 2 * m + 1) * 2.0 * c2 * u0
    grid = np.linspace(u0, u_max, 2001)
    pot = m * (m + 1) + a * np.cosh(grid) - p * p * np.sinh(grid) ** 2 - lam
    allowed = np.nonzero(pot > 0.0)[0]
    cdef double u_mid = grid[allowed[-1]] if allowed.size else 0.5 * (u0 + u_max)
    u_mid = fmin(fmax(u_mid, u0 + 0.05 * (u_max - u0)), u_max - 0.05 * (u_max - u0))
    cdef int n_out = max(<int>(npts * (u_mid - u0) / (u_max - u0)), 20)
    cdef int n_in = max(npts - n_out, 20)
    cdef int nodes_out, nodes_in
    _rk4_path(a, p, m, lam, u0, u_mid, &o1, &o2, n_out, &nodes_out)
    cdef double sigma = a / (2.0 * p) - m - 1.0
    cdef double sh = sinh(u_max)
    cdef double slope = sigma * sh / (cosh(u_max) + 1.0) - p * sh
    cdef double i1 = 1.0
    cdef double i2 = pow(sh, 2 * m + 1) * slope
    _rk4_path(a, p, m, lam, u_max, u_mid, &i1, &i2, n_in, &nodes_in)
    cdef double wr = o1 * i2 - o2 * i1
    return wr / (hypot(o1, o2) * hypot(i1, i2)), nodes_out + nodes_in


# --- coupled-channel propagation -------------------------------------------

cdef double[7] _C = [0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0]
cdef double[7][6] _A = [
    [0, 0, 0, 0, 0, 0],
    [1.0 / 5, 0, 0, 0, 0, 0],
    [3.0 / 40, 9.0 / 40, 0, 0, 0, 0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0],
    [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84],
]
cdef double[7] _B5 = [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0]
cdef double[7] _B4 = [5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200,
                      187.0 / 2100, 1.0 / 40]


cdef inline Py_ssize_t _segment(const double[::1] knots, double x) noexcept nogil:
    # same convention as searchsorted(side="right") - 1, clipped to a valid segment
    cdef Py_ssize_t lo = 0, hi = knots.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if knots[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    lo -= 1
    if lo < 0:
        lo = 0
    if lo > knots.shape[0] - 2:
        lo = knots.shape[0] - 2
    return lo


cdef void _eval_spline(const double[::1] knots, const double[:, :, :, ::1] coef, double x,
                       double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i = _segment(knots, x), r, c
    cdef double dx = x - knots[i]
    for r in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[r, c] = ((coef[i, 0, r, c] * dx + coef[i, 1, r, c]) * dx + coef[i, 2, r, c]) * dx + coef[i, 3, r, c]


cdef void _rhs_sys(const double[::1] knots, const double[:, :, :, ::1] ac, const double[:, :, :, ::1] bc,
                   double energy, double centrifugal, double x, const double[:, ::1] Y,
                   double[:, ::1] out, double[:, ::1] Am, double[:, ::1] Bm) noexcept nogil:
    cdef Py_ssize_t n = Am.shape[0], nc = Y.shape[1], r, c, k
    cdef double s
    cdef double shift = centrifugal / (x * x) - energy
    _eval_spline(knots, ac, x, Am)
    _eval_spline(knots, bc, x, Bm)
    for r in range(n):
        Am[r, r] += shift
    for r in range(n):
        for c in range(nc):
            out[r, c] = Y[n + r, c]
            s = 0.0
            for k in range(n):
                s += Am[r, k] * Y[k, c] + Bm[r, k] * Y[n + k, c]
            out[n + r, c] = s


cdef void _qr_mgs(double[:, ::1] Y, double[:, ::1] R) noexcept nogil:
    """Modified Gram-Schmidt with one re-orthogonalization pass, in place; diag(R) >= 0."""
    cdef Py_ssize_t rows = Y.shape[0], nc = Y.shape[1], i, j, k, rep
    cdef double s, nrm
    for i in range(nc):
        for j in range(nc):
            R[i, j] = 0.0
    for j in range(nc):
        for rep in range(2):
            for i in range(j):
                s = 0.0
                for k in range(rows):
                    s += Y[k, i] * Y[k, j]
                R[i, j] += s
                for k in range(rows):
                    Y[k, j] -= s * Y[k, i]
        nrm = 0.0
        for k in range(rows):
            nrm += Y[k, j] * Y[k, j]
        nrm = sqrt(nrm)
        R[j, j] = nrm
        if nrm > 0.0:
            for k in range(rows):
                Y[k, j] /= nrm


def propagate(knots, a_coef, b_coef, double energy, double centrifugal, double rho_a, double rho_b, Y,
              double rtol=1e-10, h0=None, double hmin=1e-12, long max_steps=2_000_000):
    cdef const double[::1] kn = np.ascontiguousarray(knots, dtype=float)
    cdef const double[:, :, :, ::1] ac = np.ascontiguousarray(a_coef, dtype=float)
    cdef const double[:, :, :, ::1] bc = np.ascontiguousarray(b_coef, dtype=float)
    Yarr = np.array(Y, dtype=float, order="C")
    cdef double[:, ::1] Yv = Yarr
    cdef Py_ssize_t rows = Yv.shape[0], nc = Yv.shape[1], n = rows // 2
    cdef double[:, :, ::1] ks = np.zeros((7, rows, nc))
    cdef double[:, ::1] yi = np.zeros((rows, nc))
    cdef double[:, ::1] y5 = np.zeros((rows, nc))
    cdef double[:, ::1] Am = np.zeros((n, n))
    cdef double[:, ::1] Bm = np.zeros((n, n))
    cdef double[:, ::1] R = np.zeros((nc, nc))
    Tarr = np.eye(nc)
    cdef double[:, ::1] T = Tarr
    cdef double[:, ::1] Tn = np.zeros((nc, nc))
    cdef double[7] E
    cdef Py_ssize_t s, j, r, c, k
    cdef double x = rho_a, span = rho_b - rho_a
    cdef double direction = 1.0 if span > 0 else -1.0
    cdef double h, acc, err, scale, errmax, fac, dmin, dmax, big
    cdef long accepted = 0, rejected = 0
    cdef double min_ratio = 1.0, log_scale = 0.0
    for s in range(7):
        E[s] = _B5[s] - _B4[s]
    if h0:
        h = direction * fabs(<double>h0)
    else:
        h = direction * fmin(fabs(span), 1e-3 * fmax(fabs(x), 1e-3))
    _rhs_sys(kn, ac, bc, energy, centrifugal, x, Yv, ks[0], Am, Bm)
    while direction * (rho_b - x) > 0.0:
        if accepted + rejected > max_steps:
            raise RuntimeError("step budget exhausted")
        if direction * (x + h - rho_b) > 0.0:
            h = rho_b - x
        for s in range(1, 7):
            for r in range(rows):
                for c in range(nc):
                    acc = 0.0
                    for j in range(s):
                        acc += _A[s][j] * ks[j, r, c]
                    yi[r, c] = Yv[r, c] + h * acc
            _rhs_sys(kn, ac, bc, energy, centrifugal, x + _C[s] * h, yi, ks[s], Am, Bm)
        scale = 1.0
        errmax = 0.0
        for r in range(rows):
            for c in range(nc):
                acc = 0.0
                err = 0.0
                for j in range(7):
                    acc += _B5[j] * ks[j, r, c]
                    err += E[j] * ks[j, r, c]
                y5[r, c] = Yv[r, c] + h * acc
                scale = fmax(scale, fmax(fabs(Yv[r, c]), fabs(y5[r, c])))
                errmax = fmax(errmax, fabs(h * err))
        err = errmax / (rtol * scale)
        if err <= 1.0 or fabs(h) <= hmin:
            if fabs(h) <= hmin and err > 1.0:
                raise FloatingPointError(f"step size underflow at rho={x:.6g}")
            x += h
            _qr_mgs(y5, R)
            dmin = R[0, 0]
            dmax = R[0, 0]
            for j in range(nc):
                dmin = fmin(dmin, R[j, j])
                dmax = fmax(dmax, R[j, j])
            min_ratio = fmin(min_ratio, dmin / dmax)
            Yv[:, :] = y5
            big = 0.0
            for r in range(nc):
                for c in range(nc):
                    acc = 0.0
                    for k in range(r, nc):
                        acc += R[r, k] * T[k, c]
                    Tn[r, c] = acc
                    big = fmax(big, fabs(acc))
            for r in range(nc):
                for c in range(nc):
                    T[r, c] = Tn[r, c] / big
            log_scale += log(big)
            _rhs_sys(kn, ac, bc, energy, centrifugal, x, Yv, ks[0], Am, Bm)
            accepted += 1
            fac = 5.0 if err == 0.0 else fmin(5.0, fmax(0.2, 0.9 * pow(err, -0.2)))
        else:
            rejected += 1
            fac = fmax(0.2, 0.9 * pow(err, -0.2))
        h *= fac
    return Yarr, accepted, rejected, min_ratio, Tarr, log_scale
