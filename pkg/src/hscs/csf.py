"""Coulomb spheroidal functions on the sphere of constant hyperradius.

The two-centre eigenproblem ``(h - eps) psi = 0`` separates into

    [d/dxi (xi^2-1) d/dxi - m^2/(xi^2-1) - p^2 (xi^2-1) + a xi] X = lam X
    [d/deta (1-eta^2) d/deta - m^2/(1-eta^2) - p^2 (1-eta^2) + b eta] Y = -lam Y

For a trial ``p`` both equations are solved as symmetric matrix eigenproblems:
``Y`` in orthonormal associated Legendre functions, ``X`` in even polynomials
of ``u = acosh(xi)`` carrying the exact ``(xi+1)^sigma exp(-p xi)`` tail. The
``n_xi``-th largest radial constant and the ``n_eta``-th smallest angular one
are then matched by a safeguarded Newton iteration on ``p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import eig_banded, eigh

from . import kinematics as kin
from .errors import AmbiguousLabel, NoBracket, NoConvergence, OutOfDomain, StepTooLarge
from .special import (
    eta_matrix,
    legendre_reduced,
    legendre_reduced_derivative,
    legendre_reduced_endpoint,
)

ANGULAR_CAP = 400
ANGULAR_TAIL = 1e-14
RADIAL_TERMS = 36
RADIAL_FINE = 400


# --- angular problem -------------------------------------------------------


@dataclass(frozen=True)
class AngularSolution:
    lam: float
    coeffs: np.ndarray
    n_eta: int
    m: int
    p2: float
    b: float
    eta2: float  # <Y|eta^2|Y>, needed for the product-space norm

    def reduced(self, eta) -> np.ndarray:
        return self.coeffs @ legendre_reduced(self.m, self.coeffs.size, eta)

    def __call__(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        return (1.0 - eta * eta) ** (0.5 * self.m) * self.reduced(eta)

    def derivative(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        k = self.coeffs.size
        red = self.coeffs @ legendre_reduced(self.m, k, eta)
        dred = self.coeffs @ legendre_reduced_derivative(self.m, k, eta)
        s2 = 1.0 - eta * eta
        if self.m == 0:
            return dred
        return s2 ** (0.5 * self.m) * dred - self.m * eta * s2 ** (0.5 * self.m - 1.0) * red

    def on_theta(self, theta):
        """``(Y, dY/dtheta)`` at ``eta = cos(theta)``."""
        theta = np.asarray(theta, dtype=float)
        st, ct = np.sin(theta), np.cos(theta)
        k = self.coeffs.size
        red = self.coeffs @ legendre_reduced(self.m, k, ct)
        dred = self.coeffs @ legendre_reduced_derivative(self.m, k, ct)
        if self.m == 0:
            return red, -st * dred
        val = st**self.m * red
        dval = self.m * st ** (self.m - 1) * ct * red - st ** (self.m + 1) * dred
        return val, dval

    def endpoint(self, sign: int) -> float:
        """Value of ``Y / (1-eta^2)^{m/2}`` at ``eta = sign``."""
        return float(self.coeffs @ legendre_reduced_endpoint(self.m, self.coeffs.size, sign))


def _angular_band(p2: float, b: float, m: int, size: int) -> np.ndarray:
    """Lower band storage of ``l(l+1) + p^2 (1-eta^2) - b eta``."""
    X = eta_matrix(m, size + 1)
    X2 = (X @ X)[:size, :size]
    l = m + np.arange(size, dtype=float)
    A = np.diag(l * (l + 1.0)) + p2 * (np.eye(size) - X2) - b * X[:size, :size]
    band = np.zeros((3, size))
    band[0] = np.diag(A)
    band[1, :-1] = np.diag(A, -1)
    band[2, :-2] = np.diag(A, -2)
    return band, X2


def angular_eigenvalue(p2: float, b: float, m: int, n_eta: int, size: int | None = None) -> AngularSolution:
    """Separation constant of the ``n_eta``-th angular function.

    The basis grows by doubling until the eigenvector tail drops below
    ``1e-14``; eigenvalue rank equals node count.
    """
    if m < 0 or n_eta < 0:
        raise ValueError("m and n_eta must be non-negative")
    if size is None:
        size = max(24, 2 * (n_eta + 1) + int(2.0 * math.sqrt(max(p2, 0.0) + abs(b))) + 16)
    while True:
        band, X2 = _angular_band(p2, b, m, size)
        w, v = eig_banded(band, lower=True, select="i", select_range=(n_eta, n_eta))
        c = v[:, 0]
        tail = np.max(np.abs(c[-3:]))
        if tail < ANGULAR_TAIL:
            break
        if size >= ANGULAR_CAP:
            raise NoConvergence(f"angular basis reached {ANGULAR_CAP} terms (tail {tail:.2e})")
        size = min(2 * size, ANGULAR_CAP)
    # Y(+1) > 0. The reduced endpoints never vanish, so Y(-1)/Y(+1) keeps the
    # sign (-1)^n_eta of the Legendre limit; read it at the better-resolved end.
    up = c @ legendre_reduced_endpoint(m, size, 1)
    down = c @ legendre_reduced_endpoint(m, size, -1)
    if (up if abs(up) >= abs(down) else (-1) ** n_eta * down) < 0.0:
        c = -c
    return AngularSolution(float(w[0]), c, n_eta, m, p2, b, float(c @ X2 @ c))


# --- radial problem --------------------------------------------------------


@lru_cache(maxsize=32)
def _jacobi_rule(n: int, m: int):
    """Gauss-Jacobi rule on ``[0, 1]`` for the weight ``x^m``."""
    from scipy.special import roots_jacobi

    t, w = roots_jacobi(n, 0.0, float(m))
    return 0.5 * (t + 1.0), w / 2.0 ** (m + 1)


def _barycentric_weights(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    logs = np.sum(np.log(np.abs(diff)), axis=1)
    signs = np.prod(np.sign(diff), axis=1)
    return signs * np.exp(-(logs - logs.min()))


def _differentiation_matrix(x, bary):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def gauss_rule(x, w, n: int):
    """``n``-point Gauss rule for the discrete measure ``sum w_i delta(x - x_i)``.

    Lanczos with full reorthogonalization builds the Jacobi matrix; its
    eigenvalues are the nodes and squared first components give the weights.
    """
    total = float(np.sum(w))
    q = np.sqrt(w / total)
    Q = np.zeros((n, x.size))
    alpha = np.zeros(n)
    beta = np.zeros(max(n - 1, 0))
    prev = np.zeros_like(q)
    b = 0.0
    for k in range(n):
        Q[k] = q
        v = x * q - b * prev
        alpha[k] = q @ v
        v -= alpha[k] * q
        v -= Q[: k + 1].T @ (Q[: k + 1] @ v)
        if k == n - 1:
            break
        b = float(np.linalg.norm(v))
        if b <= 1e-300:
            raise NoConvergence("discrete measure exhausted before the requested rule size")
        beta[k] = b
        prev, q = q, v / b
    from scipy.linalg import eigh_tridiagonal

    nodes, vecs = eigh_tridiagonal(alpha, beta)
    return nodes, total * vecs[0] ** 2


def _barycentric(x, nodes, bary, values, derivative: bool = False):
    """Interpolant (and its derivative) through ``(nodes, values)``; ``values`` may be 1D."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    diff = flat[:, None] - nodes[None, :]
    exact = diff == 0.0
    hit = exact.any(axis=1)
    diff[exact] = 1.0
    a = bary / diff
    r = a.sum(axis=1)
    val = (a @ values) / r
    if hit.any():
        val[hit] = values[np.argmax(exact[hit], axis=1)]
    if not derivative:
        return val.reshape(x.shape)
    der = -((a / diff) * (values[None, :] - val[:, None])).sum(axis=1) / r
    if hit.any():
        # derivative at a node from the differentiation-matrix row
        j = np.argmax(exact[hit], axis=1)
        w = bary
        rows = []
        for jj in j:
            dn = nodes[jj] - nodes
            dn[jj] = 1.0
            row = (w / w[jj]) / dn
            row[jj] = 0.0
            rows.append(row @ (values - values[jj]))
        der[hit] = rows
    return val.reshape(x.shape), der.reshape(x.shape)


def _u_of_xi(xi):
    """``acosh(xi)`` accurate near ``xi = 1``."""
    delta = np.asarray(xi, dtype=float) - 1.0
    return np.log1p(delta + np.sqrt(delta * (delta + 2.0)))


def _envelope_log(sigma: float, p: float, delta):
    return sigma * np.log1p(0.5 * delta) - p * delta


def _xi_extent(sigma: float, p: float, drop: float = 40.0) -> float:
    """``xi_max - 1`` where the asymptotic envelope has fallen by ``exp(-drop)`` past its peak."""
    peak = max(sigma / p - 2.0, 0.0) if sigma > 0 else 0.0
    top = _envelope_log(sigma, p, peak)
    lo, hi = peak, peak + 1.0 / p
    while _envelope_log(sigma, p, hi) > top - drop:
        lo, hi = hi, 2.0 * hi + 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _envelope_log(sigma, p, mid) > top - drop:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class RadialSolution:
    """Radial factor on ``xi = cosh u``, ``0 <= u <= u_max``.

    ``X = sinh(u)^m env(u) P(x)``, ``x = (u/u_max)^2``, where ``env`` is the
    exact asymptotic envelope ``((xi+1)/2)^sigma exp(-p(xi-1))`` scaled to unit
    peak and ``P`` is the polynomial through ``coeffs`` at ``nodes``.  ``X = 0``
    beyond ``u_max`` where the envelope is below ``e^-40``.
    """

    lam: float
    coeffs: np.ndarray
    nodes: np.ndarray
    n_xi: int
    m: int
    a: float
    p: float
    sigma: float
    u_max: float
    env_shift: float = 0.0  # log of the envelope peak
    scale: float = 1.0
    x2norm: float = 1.0  # int X^2 dxi
    xi2: float = 0.0  # <X|xi^2|X> / <X|X>
    dlam_dp: float = 0.0
    bary: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.bary is None:
            object.__setattr__(self, "bary", _barycentric_weights(self.nodes))

    @property
    def xi_max(self) -> float:
        return math.cosh(self.u_max)

    def _envelope(self, u):
        delta = 2.0 * np.sinh(0.5 * u) ** 2
        env = np.exp(_envelope_log(self.sigma, self.p, delta) - self.env_shift)
        dlog = self.sigma * np.sinh(u) / (2.0 + delta) - self.p * np.sinh(u)
        return env, dlog

    def on_u(self, u, derivative: bool = False):
        """``(X/sinh^m u, d/du of the same)`` at hyperbolic angle ``u``."""
        u = np.asarray(u, dtype=float)
        inside = u <= self.u_max
        uc = np.minimum(u, self.u_max)
        x = uc**2 / self.u_max**2
        env, dlog = self._envelope(uc)
        vals = self.scale * self.coeffs
        if not derivative:
            return np.where(inside, env * _barycentric(x, self.nodes, self.bary, vals), 0.0)
        P, dP = _barycentric(x, self.nodes, self.bary, vals, derivative=True)
        dP = dP * 2.0 * uc / self.u_max**2
        return np.where(inside, env * P, 0.0), np.where(inside, env * (dP + dlog * P), 0.0)

    def on_u_full(self, u):
        """``(X, dX/du)`` at hyperbolic angle ``u``."""
        u = np.asarray(u, dtype=float)
        g, dg = self.on_u(u, derivative=True)
        if self.m == 0:
            return g, dg
        sh = np.sinh(u)
        return sh**self.m * g, sh**self.m * dg + self.m * sh ** (self.m - 1) * np.cosh(u) * g

    def u_derivative(self, u) -> np.ndarray:
        """``dX/du``."""
        return self.on_u_full(u)[1]

    def reduced(self, xi) -> np.ndarray:
        """``X / (xi^2-1)^{m/2}``."""
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < 1.0):
            raise OutOfDomain("xi must be >= 1")
        return self.on_u(_u_of_xi(xi))

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.clip(xi * xi - 1.0, 0.0, None) ** (0.5 * self.m) * self.reduced(xi)

    def derivative(self, xi) -> np.ndarray:
        """``dX/dxi``, finite at ``xi = 1`` since ``X/sinh^m`` is even in ``u``."""
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < 1.0):
            raise OutOfDomain("xi must be >= 1")
        u = _u_of_xi(xi)
        inside = u <= self.u_max
        uc = np.minimum(u, self.u_max)
        x = uc**2 / self.u_max**2
        env, _ = self._envelope(uc)
        P, dPdx = _barycentric(x, self.nodes, self.bary, self.scale * self.coeffs, derivative=True)
        delta = xi - 1.0
        # d/dxi of env*P: dx/dxi = 2u/(u_max^2 sinh u), dlog env/dxi = sigma/(xi+1) - p
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(uc > 1e-8, uc / np.sinh(np.where(uc > 1e-8, uc, 1.0)), 1.0)
        g = np.where(inside, env * P, 0.0)
        dg = np.where(inside, env * (dPdx * 2.0 * ratio / self.u_max**2
                                     + (self.sigma / (2.0 + delta) - self.p) * P), 0.0)
        if self.m == 0:
            return dg
        s2 = xi * xi - 1.0
        return s2 ** (0.5 * self.m) * dg + self.m * xi * s2 ** (0.5 * self.m - 1.0) * g

    def endpoint(self) -> float:
        """``X / (xi^2-1)^{m/2}`` at ``xi = 1``."""
        return float(self.on_u(np.zeros(1))[0])


def radial_eigenvalue(a: float, p: float, m: int, n_xi: int, nterms: int = RADIAL_TERMS) -> RadialSolution:
    """Separation constant of the radial function with ``n_xi`` nodes.

    With ``X = sinh^m(u) G`` and the cross term integrated by parts the
    quadratic form (measure ``sinh u du``) is
    ``-int sh^{2m+1} G_u^2 + int sh^{2m+1} (m(m+1) + a cosh u - p^2 sinh^2 u) G^2``.
    ``G = env P`` with ``P`` a polynomial in ``x = (u/u_max)^2``; the form is
    evaluated at the Gauss nodes of the full weight ``sh^{2m+1} env^2`` so the
    overlap matrix is diagonal and the node basis stays localized.
    """
    if p <= 0.0:
        raise ValueError("p must be positive")
    sigma = a / (2.0 * p) - m - 1.0
    u_max = float(_u_of_xi(1.0 + _xi_extent(sigma, p)))
    peak = max(sigma / p - 2.0, 0.0) if sigma > 0 else 0.0
    shift = float(_envelope_log(sigma, p, peak))
    L2 = u_max * u_max

    def weight(x):
        u = u_max * np.sqrt(x)
        delta = 2.0 * np.sinh(0.5 * u) ** 2
        shu = np.sinh(u) / u
        return 0.5 * shu ** (2 * m + 1) * u_max ** (2 * m + 2) * np.exp(2.0 * (_envelope_log(sigma, p, delta) - shift))

    xf, wf = _jacobi_rule(RADIAL_FINE, m)
    x, E = gauss_rule(xf, wf * weight(xf), nterms)
    bary = _barycentric_weights(x)
    D = _differentiation_matrix(x, bary)
    u = u_max * np.sqrt(x)
    sh, ch = np.sinh(u), np.cosh(u)
    delta = 2.0 * np.sinh(0.5 * u) ** 2
    kappa = sigma * sh / (2.0 + delta) - p * sh
    Du = D * (2.0 * u / L2)[:, None] + np.diag(kappa)  # G_u / env on node values of P
    r = np.sqrt(E)
    A = r[:, None] * Du / r[None, :]
    Ht = -(A.T @ A) + np.diag(m * (m + 1) + a * ch - p * p * sh * sh)
    vals, vecs = np.linalg.eigh(0.5 * (Ht + Ht.T))
    y = vecs[:, -1 - n_xi]
    P = y / r
    g = float(np.sum(y * y * sh * sh))
    sol = RadialSolution(float(vals[-1 - n_xi]), P, x, n_xi, m, a, p, sigma, u_max, env_shift=shift,
                         xi2=g + 1.0, dlam_dp=-2.0 * p * g, bary=bary)
    if sol.endpoint() < 0.0:
        sol = replace(sol, coeffs=-P)
    return sol


# --- shooting (mismatch) ---------------------------------------------------


def radial_mismatch(a: float, p: float, m: int, lam: float, xi_max: float | None = None,
                    npts: int = 4000) -> tuple[float, int]:
    """Two-sided shooting mismatch for the radial equation at separation constant ``lam``.

    Outward integration starts on the regular ``(xi^2-1)^{m/2}`` branch at
    ``xi = 1``; inward integration starts on the decaying branch at ``xi_max``.
    Both carry a running log-amplitude. Returns the normalized Wronskian
    mismatch at the matching point and the total sign-change count of the
    two partial solutions (the node count at an eigenvalue).
    """
    from ._core import shoot_radial

    if p <= 0.0:
        raise ValueError("p must be positive")
    if xi_max is None:
        xi_max = max(30.0, 25.0 / p)
    return shoot_radial(a, p, m, lam, xi_max, npts)


def count_nodes(values) -> int:
    v = np.asarray(values)
    v = v[np.abs(v) > 1e-12 * np.max(np.abs(v))]
    return int(np.count_nonzero(np.signbit(v[1:]) != np.signbit(v[:-1])))


# --- the coupled two-parameter problem ---------------------------------------


@dataclass(frozen=True)
class ChannelLabel:
    alpha: int
    n: int
    s: int
    m: int
    s_verified: bool = False

    def as_tuple(self):
        return (self.alpha, self.n, self.s, self.m)


@dataclass(frozen=True)
class CSFState:
    rho: float
    m: int
    n_xi: int
    n_eta: int
    eps: float
    lam: float
    p: float
    a: float
    b: float
    d: float
    radial: RadialSolution
    angular: AngularSolution
    sign: int = 1
    label: ChannelLabel | None = field(default=None, compare=False)

    @property
    def quantum_numbers(self) -> tuple[int, int, int]:
        return (self.n_xi, self.n_eta, self.m)

    def X(self, xi) -> np.ndarray:
        return self.sign * self.radial(xi)

    def dX(self, xi) -> np.ndarray:
        return self.sign * self.radial.derivative(xi)

    def Y(self, eta) -> np.ndarray:
        return self.angular(eta)

    def dY(self, eta) -> np.ndarray:
        return self.angular.derivative(eta)

    def tabulate(self, u, theta):
        """Separated factors on ``xi = cosh u``, ``eta = cos theta``: ``(X, X_u, Y, Y_theta)``."""
        X, Xu = self.radial.on_u_full(u)
        Y, Yt = self.angular.on_theta(theta)
        return self.sign * X, self.sign * Xu, Y, Yt

    def evaluate(self, xi, eta) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if np.any(xi < 1.0) or np.any(np.abs(eta) > 1.0):
            raise OutOfDomain("need xi >= 1 and |eta| <= 1")
        xi, eta = np.broadcast_arrays(xi, eta)
        out = self.X(xi.ravel()) * self.Y(eta.ravel())
        return out.reshape(xi.shape) if xi.ndim else out[0]

    def __call__(self, xi, eta):
        return self.evaluate(xi, eta)

    def flipped(self) -> "CSFState":
        return replace(self, sign=-self.sign)

    def norm(self) -> float:
        """``<phi|phi>`` from the separated one-dimensional moments."""
        r = self.radial
        return self.d**3 / 8.0 * r.x2norm * (r.xi2 - self.angular.eta2)


def _p_guess(system: kin.ParticleSystem, rho: float, m: int, n_xi: int, n_eta: int) -> float:
    z1, z2 = kin.effective_charges(system, rho)
    N = n_xi + n_eta + m + 1
    eps = -max(z1, z2) ** 2 / (4.0 * N * N)
    return kin.p_from_energy(system, eps) if eps < 0 else 1e-3


def solve_parameters(a: float, b: float, m: int, n_xi: int, n_eta: int, p_guess: float,
                     tol: float = 1e-14, maxiter: int = 200):
    """Find ``p`` with matching separation constants; returns ``(p, radial, angular)``."""

    def F(p):
        rad = radial_eigenvalue(a, p, m, n_xi)
        ang = angular_eigenvalue(p * p, b, m, n_eta)
        dang = 2.0 * p * (1.0 - ang.eta2)
        return rad.lam - ang.lam, rad.dlam_dp - dang, rad, ang

    p = max(p_guess, 1e-8)
    lo = hi = None  # F(lo) > 0 > F(hi); F decreases monotonically in p
    for _ in range(maxiter):
        f, df, rad, ang = F(p)
        if abs(f) <= tol * (abs(ang.lam) + abs(rad.lam) + 1.0):
            return p, rad, ang
        if f > 0:
            lo = p if lo is None else max(lo, p)
        else:
            hi = p if hi is None else min(hi, p)
        if lo is not None and hi is not None and hi - lo <= 1e-15 * hi:
            return p, rad, ang
        step = p - f / df if df < 0 else None
        if lo is not None and hi is not None:
            if step is None or not (lo < step < hi):
                step = math.sqrt(lo * hi)
        else:
            # geometric expansion toward the unbracketed side
            if step is None:
                step = 2.0 * p if f > 0 else 0.5 * p
            step = min(max(step, 0.25 * p), 4.0 * p)
        p = step
    if lo is None or hi is None:
        raise NoBracket(f"no eigenvalue bracket for (n_xi, n_eta, m)=({n_xi},{n_eta},{m}), a={a}, b={b}")
    raise NoConvergence(f"p iteration did not converge (residual {f:.2e})")


def solve_state(system: kin.ParticleSystem, rho: float, m: int, n_xi: int, n_eta: int,
                eps_guess: float | None = None) -> CSFState:
    """Normalized, sign-fixed two-centre eigenstate at hyperradius ``rho``."""
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    if min(m, n_xi, n_eta) < 0:
        raise ValueError("quantum numbers must be non-negative")
    a, b = kin.charge_parameters(system, rho)
    if a <= 0.0:
        raise NoBracket("no attractive charge")
    if eps_guess is not None and eps_guess < 0.0:
        p0 = kin.p_from_energy(system, eps_guess)
    else:
        p0 = _p_guess(system, rho, m, n_xi, n_eta)
    p, rad, ang = solve_parameters(a, b, m, n_xi, n_eta, p0)
    d = system.geometry.d
    # normalization: (d^3/8) int int (xi^2-eta^2) X^2 Y^2 = 1 with int Y^2 = 1
    base = d**3 / 8.0 * (rad.xi2 - ang.eta2)
    rad = replace(rad, scale=rad.scale / math.sqrt(base), x2norm=1.0 / base)
    return CSFState(rho, m, n_xi, n_eta, kin.energy_from_p(system, p), 0.5 * (rad.lam + ang.lam),
                    p, a, b, d, rad, ang)


def evaluate(state: CSFState, xi, eta):
    return state.evaluate(xi, eta)


# --- rho derivative --------------------------------------------------------


def default_step(rho: float) -> float:
    return max(1e-4, 1e-4 * rho)


def shifted_state(system: kin.ParticleSystem, state: CSFState, delta: float) -> CSFState:
    """Same family at ``rho + delta`` with the sign convention of ``state``."""
    s = solve_state(system, state.rho + delta, state.m, state.n_xi, state.n_eta, eps_guess=state.eps)
    return s if state.sign > 0 else s.flipped()


def _richardson(system, state, values, step, check):
    h = default_step(state.rho) if step is None else step
    if h >= state.rho:
        raise StepTooLarge("step exceeds rho")
    v = {delta: values(shifted_state(system, state, delta)) for delta in (h, -h, 0.5 * h, -0.5 * h)}
    d1 = (v[h] - v[-h]) / (2.0 * h)
    d2 = (v[0.5 * h] - v[-0.5 * h]) / h
    ref = np.max(np.abs(d2[0])) + 1e-300
    disagreement = np.max(np.abs(d1[0] - d2[0])) / ref
    if disagreement > check:
        raise StepTooLarge(f"Richardson disagreement {disagreement:.2e} for step {h}")
    return (4.0 * d2 - d1) / 3.0


def d_rho(system: kin.ParticleSystem, state: CSFState, xi, eta, step: float | None = None,
          check: float = 1e-4, with_gradient: bool = False):
    """Central-difference ``d phi / d rho`` on the points ``(xi, eta)``.

    Two step sizes are combined by Richardson extrapolation; their raw
    disagreement beyond ``check`` (relative) raises :class:`StepTooLarge`.
    With ``with_gradient`` the xi and eta derivatives of ``d phi/d rho`` are
    returned as well.
    """

    def values(s):
        out = [s.evaluate(xi, eta)]
        if with_gradient:
            out.append(s.dX(xi) * s.Y(eta))
            out.append(s.X(xi) * s.dY(eta))
        return np.array(out)

    rich = _richardson(system, state, values, step, check)
    return rich if with_gradient else rich[0]


def d_rho_grid(system: kin.ParticleSystem, state: CSFState, u, theta, step: float | None = None,
               check: float = 1e-4) -> np.ndarray:
    """``d phi / d rho`` on the tensor grid ``cosh(u) x cos(theta)``, shape ``(len(u), len(theta))``."""

    def values(s):
        X, _, Y, _ = s.tabulate(u, theta)
        return np.outer(X, Y)[None]

    return _richardson(system, state, values, step, check)[0]


# --- classification --------------------------------------------------------


def eta_centroid(state: CSFState, nodes: int = 200) -> float:
    """Probability-weighted ``<eta>`` under the product measure."""
    from numpy.polynomial.legendre import leggauss

    th, w = leggauss(nodes)
    theta = 0.5 * np.pi * (th + 1.0)
    eta = np.cos(theta)
    weight = 0.5 * np.pi * w * np.sin(theta)
    Y2 = state.Y(eta) ** 2
    r = state.radial
    int_x2 = r.x2norm
    int_xi2x2 = r.xi2 * r.x2norm
    # <eta> = int (xi^2 - eta^2) eta X^2 Y^2 / norm
    num = int_xi2x2 * np.sum(weight * eta * Y2) - int_x2 * np.sum(weight * eta**3 * Y2)
    den = int_xi2x2 * np.sum(weight * Y2) - int_x2 * np.sum(weight * eta**2 * Y2)
    return float(num / den)


def classify(system: kin.ParticleSystem, family: list[CSFState], nmax: int = 12,
             localization: float = 0.9) -> ChannelLabel:
    """Asymptotic channel label of a state family tracked over increasing ``rho``."""
    last = max(family, key=lambda s: s.rho)
    c = eta_centroid(last)
    if abs(c) < localization:
        raise AmbiguousLabel(f"<eta> = {c:.3f} at rho = {last.rho}; state not yet localized")
    alpha = 2 if c > 0 else 1
    scaled = last.eps / last.rho**2
    ladder = [kin.scaled_threshold(system, alpha, n) for n in range(last.m + 1, nmax + 1)]
    n = last.m + 1 + int(np.argmin([abs(scaled - v) for v in ladder]))
    # parabolic index from node bookkeeping; not cross-checked against tabulated correspondences
    local_nodes = last.n_xi
    s = min(local_nodes, n - last.m - 1)
    return ChannelLabel(alpha, n, s, last.m, s_verified=False)


def track(system: kin.ParticleSystem, rhos, m: int, n_xi: int, n_eta: int) -> list[CSFState]:
    """Solve one state family along ``rhos`` with continuation of the eigenvalue guess."""
    out = []
    guess = None
    prev_rho = None
    for rho in rhos:
        if guess is not None:
            guess = guess * (rho / prev_rho) ** 2
        s = solve_state(system, rho, m, n_xi, n_eta, eps_guess=guess)
        out.append(s)
        guess, prev_rho = s.eps, rho
    return out
