"""Coupling matrices of the hyperradial system by 2D quadrature.

All integrals are done on ``xi = cosh u``, ``eta = cos theta`` with composite
Gauss-Legendre panels in ``u`` and ``theta``.  In these variables the product
measure ``(xi^2 - eta^2) dxi deta`` becomes
``(cosh^2 u - cos^2 theta) sinh u sin theta du dtheta`` and every integrand is
smooth: the factor ``(xi - eta)(xi + eta)`` cancels the ``1/r`` singularities
at the two Coulomb centres.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import csf
from . import kinematics as kin
from .errors import GridOverflow, ValidationError

FAMILIES = ("P", "Q", "R", "U", "W")


@lru_cache(maxsize=16)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _panels(edges, points: int):
    t, w = _leggauss(points)
    x, wx = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        x.append(lo + half * (t + 1.0))
        wx.append(half * w)
    return np.concatenate(x), np.concatenate(wx)


def _u_edges(u_maxes, split: int = 4):
    tops = sorted(set(float(u) for u in u_maxes))
    edges = [0.0]
    for top in tops:
        lo = edges[-1]
        edges.extend(lo + (top - lo) * np.arange(1, split + 1) / split)
    return np.array(edges)


def _theta_edges(levels: int):
    half = [0.5 * math.pi * 2.0**-k for k in range(levels, -1, -1)]
    left = [0.0] + half
    right = [math.pi - x for x in reversed(half[:-1])] + [math.pi]
    return np.array(left + right)


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor grid on ``(u, theta)`` with the geometry of one particle system."""

    u: np.ndarray
    wu: np.ndarray
    theta: np.ndarray
    wtheta: np.ndarray
    d: float
    c: float
    t1: float
    t2: float
    points: int = 16
    u_end: float = math.nan
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def xi_max(self) -> float:
        """Outer edge of the radial integration range."""
        return math.cosh(self.u_end)

    @property
    def shape(self):
        return (self.u.size, self.theta.size)

    def _get(self, key, make):
        if key not in self.cache:
            self.cache[key] = make()
        return self.cache[key]

    @property
    def area(self) -> np.ndarray:
        """``sinh u sin theta du dtheta`` weights."""
        return self._get("area", lambda: np.outer(self.wu * np.sinh(self.u), self.wtheta * np.sin(self.theta)))

    @property
    def xi_minus_eta(self) -> np.ndarray:
        def make():
            a = 2.0 * np.sinh(0.5 * self.u) ** 2
            return a[:, None] + 2.0 * np.sin(0.5 * self.theta)[None, :] ** 2
        return self._get("xme", make)

    @property
    def xi_plus_eta(self) -> np.ndarray:
        def make():
            a = 2.0 * np.sinh(0.5 * self.u) ** 2
            return a[:, None] + 2.0 * np.cos(0.5 * self.theta)[None, :] ** 2
        return self._get("xpe", make)

    @property
    def measure(self) -> np.ndarray:
        """Weights of ``<f|g> = (d^3/8) int (xi^2-eta^2) f g dxi deta``."""
        return self._get("measure", lambda: self.d**3 / 8.0 * self.xi_minus_eta * self.xi_plus_eta * self.area)

    @property
    def measure_over_r1(self) -> np.ndarray:
        return self._get("m_r1", lambda: self.d**2 / 4.0 * self.xi_minus_eta * self.area)

    @property
    def measure_over_r2(self) -> np.ndarray:
        return self._get("m_r2", lambda: self.d**2 / 4.0 * self.xi_plus_eta * self.area)

    @property
    def z(self) -> np.ndarray:
        return self._get("z", lambda: self.c + 0.5 * self.d * np.outer(np.cosh(self.u), np.cos(self.theta)))

    @property
    def perp(self) -> np.ndarray:
        return self._get("perp", lambda: 0.5 * self.d * np.outer(np.sinh(self.u), np.sin(self.theta)))

    @property
    def t2sq(self) -> np.ndarray:
        """``t^2`` on the grid."""
        return self._get("t2", lambda: self.z**2 + self.perp**2)

    @property
    def t2sq_gradient(self):
        """``(d t^2/du, d t^2/dtheta)``."""
        def make():
            h = 0.5 * self.d
            sh, ch = np.sinh(self.u)[:, None], np.cosh(self.u)[:, None]
            st, ct = np.sin(self.theta)[None, :], np.cos(self.theta)[None, :]
            du = 2.0 * self.z * h * sh * ct + 2.0 * self.perp * h * ch * st
            dth = -2.0 * self.z * h * ch * st + 2.0 * self.perp * h * sh * ct
            return du, dth
        return self._get("grad", make)

    def differences_from_centres(self):
        """``(t^2 - t1^2, t^2 - t2^2)`` without cancellation near the centres."""
        def make():
            h = 0.5 * self.d
            sh2 = (2.0 * np.sinh(0.5 * self.u) ** 2)[:, None]
            ct = np.cos(self.theta)[None, :]
            c2 = (2.0 * np.cos(0.5 * self.theta) ** 2)[None, :]
            s2 = (2.0 * np.sin(0.5 * self.theta) ** 2)[None, :]
            z_plus_t1 = h * (c2 + sh2 * ct)  # z + t1
            z_minus_t2 = -h * (s2 - sh2 * ct)  # z - t2
            perp2 = self.perp**2
            d1 = z_plus_t1 * (z_plus_t1 - 2.0 * self.t1) + perp2
            d2 = z_minus_t2 * (z_minus_t2 + 2.0 * self.t2) + perp2
            return d1, d2
        return self._get("dcentres", make)


@dataclass(frozen=True)
class Tabulation:
    """Separated factors of a state list on a grid."""

    X: np.ndarray
    Xu: np.ndarray
    Y: np.ndarray
    Yt: np.ndarray
    m: int

    @property
    def phi(self) -> np.ndarray:
        return self.X[:, :, None] * self.Y[:, None, :]


def tabulate(states, grid: QuadratureGrid) -> Tabulation:
    ms = {s.m for s in states}
    if len(ms) != 1:
        raise ValidationError("tabulated states must share m")
    rows = [s.tabulate(grid.u, grid.theta) for s in states]
    return Tabulation(*(np.array([r[k] for r in rows]) for k in range(4)), m=ms.pop())


def _bilinear(A: np.ndarray, B: np.ndarray, weight: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    return (A.reshape(n, -1) * weight.ravel()) @ B.reshape(B.shape[0], -1).T


def gram(states, grid: QuadratureGrid) -> np.ndarray:
    phi = tabulate(states, grid).phi
    return _bilinear(phi, phi, grid.measure)


def _make_grid(system: kin.ParticleSystem, u_maxes, points: int, levels: int) -> QuadratureGrid:
    edges = _u_edges(u_maxes)
    u, wu = _panels(edges, points)
    th, wt = _panels(_theta_edges(levels), points)
    g = system.geometry
    return QuadratureGrid(u, wu, th, wt, g.d, 0.5 * (g.t2 - g.t1), g.t1, g.t2, points, float(edges[-1]))


def _theta_levels(states) -> int:
    # angular width of a localized state ~ (2/p)^{1/2}; grade panels down to a fifth of it
    p = max(s.p for s in states)
    width = math.sqrt(2.0 / p)
    return max(2, int(math.ceil(math.log2(0.5 * math.pi / (0.2 * width)))))


def build_grid(system: kin.ParticleSystem, states, tol: float = 1e-10, points: int = 16,
               max_points: int = 64) -> QuadratureGrid:
    """Grid on which every state (grouped by ``m``) has Gram matrix within ``tol`` of identity."""
    if not states:
        raise ValidationError("empty state set")
    u_maxes = [s.radial.u_max for s in states]
    levels = _theta_levels(states)
    while points <= max_points:
        grid = _make_grid(system, u_maxes, points, levels)
        worst = 0.0
        for m in sorted({s.m for s in states}):
            group = [s for s in states if s.m == m]
            G = gram(group, grid)
            worst = max(worst, float(np.max(np.abs(G - np.eye(len(group))))))
        if worst < tol:
            return grid
        points *= 2
    raise GridOverflow(f"Gram deviation {worst:.2e} above {tol:.1e} with {max_points} points per panel")


def refine_grid(system: kin.ParticleSystem, grid: QuadratureGrid, states, factor: int = 2) -> QuadratureGrid:
    return _make_grid(system, [s.radial.u_max for s in states], grid.points * factor, _theta_levels(states))


# --- regularized potential -------------------------------------------------


def coalescence_limit(system: kin.ParticleSystem, alpha: int) -> float:
    """Axial limit ``3 Z_a sqrt(2(mu - mu_a))`` of ``w^(a3)`` at ``t -> t_a``."""
    mu = system.masses.mu
    return 3.0 * system.Z(alpha) * math.sqrt(2.0 * (mu - system.masses.mu_alpha(alpha)))


def _centre(system, alpha):
    g = system.geometry
    return np.array([0.0, 0.0, -g.t1 if alpha == 1 else g.t2]), (g.t1 if alpha == 1 else g.t2)


def w_pair(system: kin.ParticleSystem, alpha: int, t, radius: float = 1e-6) -> np.ndarray:
    """``w^(a3)(t)`` for points ``t`` of shape ``(..., 3)``.

    Inside ``radius`` of the centre the first-order directional expansion is
    used; it is finite but depends on the approach direction.
    """
    t = np.asarray(t, dtype=float)
    centre, ta = _centre(system, alpha)
    delta = t - centre
    r = np.linalg.norm(delta, axis=-1)
    tt = np.sum(t * t, axis=-1)
    pref = system.Z(alpha) * math.sqrt(2.0 * system.masses.mu)
    ratio = (tt - ta * ta) / (1.0 + ta * ta)
    with np.errstate(divide="ignore", invalid="ignore"):
        far = pref * np.sqrt(1.0 + tt) * np.expm1(1.5 * np.log1p(ratio)) / r
        # t^2 - t_a^2 = 2 centre.delta + delta^2
        cos_dir = np.sum(delta * centre, axis=-1) / (r * ta)
        near = pref * 3.0 * ta / math.sqrt(1.0 + ta * ta) * np.nan_to_num(cos_dir)
    return np.where(r < radius, near, far)


def w_total(system: kin.ParticleSystem, t) -> np.ndarray:
    """``w12 + w13 + w23``; ``W = w_total / rho``."""
    t = np.asarray(t, dtype=float)
    tt = np.sum(t * t, axis=-1)
    m = system.masses
    w12 = system.Z1 * system.Z2 * math.sqrt(2.0 * m.M) * np.sqrt(1.0 + tt)
    return w12 + w_pair(system, 1, t) + w_pair(system, 2, t)


def _w_weighted(system: kin.ParticleSystem, grid: QuadratureGrid) -> np.ndarray:
    """``(w12 + w13 + w23)`` times the quadrature measure."""

    def make():
        mu = system.masses.mu
        s = np.sqrt(1.0 + grid.t2sq)
        d1, d2 = grid.differences_from_centres()
        out = system.Z1 * system.Z2 * math.sqrt(2.0 * system.masses.M) * s * grid.measure
        for Z, ta, diff, mr in ((system.Z1, grid.t1, d1, grid.measure_over_r1),
                                (system.Z2, grid.t2, d2, grid.measure_over_r2)):
            if Z != 0.0:
                bracket = np.expm1(1.5 * np.log1p(diff / (1.0 + ta * ta)))
                out = out + Z * math.sqrt(2.0 * mu) * s * bracket * mr
        return out

    return grid._get(("w", system), make)


# --- matrix families -------------------------------------------------------


def compute_PQ(system: kin.ParticleSystem, states, grid: QuadratureGrid, step: float | None = None):
    """``P_ij = <d phi_i|d phi_j>``, ``Q_ij = <d phi_i|phi_j>``, and the raw antisymmetry residual."""
    tab = tabulate(states, grid)
    D = np.array([csf.d_rho_grid(system, s, grid.u, grid.theta, step=step) for s in states])
    P = _bilinear(D, D, grid.measure)
    Q = _bilinear(D, tab.phi, grid.measure)
    residual = float(np.max(np.abs(Q + Q.T)))
    return 0.5 * (P + P.T), 0.5 * (Q - Q.T), residual


def rotor_prefactor(J: int, m: int) -> float:
    return float(J * (J + 1) - 2 * m * m)


def compute_R(states, grid: QuadratureGrid, J: int) -> np.ndarray:
    pref = rotor_prefactor(J, states[0].m)
    n = len(states)
    if pref == 0.0:
        return np.zeros((n, n))
    phi = tabulate(states, grid).phi
    R = pref * _bilinear(phi, phi, (1.0 + grid.t2sq) * grid.measure)
    return 0.5 * (R + R.T)


def compute_U(states, grid: QuadratureGrid) -> np.ndarray:
    """``rho^-2 <(1+t^2) phi_i | h_m | (1+t^2) phi_j>`` through the weak form of ``h_m``.

    With ``F = (1+t^2) phi`` the quadratic form is
    ``(d/2) int [F_u G_u + F_th G_th + m^2 (1/sinh^2 u + 1/sin^2 th) F G - (a cosh u + b cos th) F G] dA``,
    symmetric by construction and free of second derivatives.
    """
    s0 = states[0]
    tab = tabulate(states, grid)
    m = tab.m
    T = 1.0 + grid.t2sq
    Tu, Tth = grid.t2sq_gradient
    phi = tab.phi
    F = T * phi
    Fu = Tu * phi + T * (tab.Xu[:, :, None] * tab.Y[:, None, :])
    Ft = Tth * phi + T * (tab.X[:, :, None] * tab.Yt[:, None, :])
    sh, ch = np.sinh(grid.u)[:, None], np.cosh(grid.u)[:, None]
    st, ct = np.sin(grid.theta)[None, :], np.cos(grid.theta)[None, :]
    pot = m * m * (1.0 / sh**2 + 1.0 / st**2) - (s0.a * ch + s0.b * ct)
    A = grid.area
    U = _bilinear(Fu, Fu, A) + _bilinear(Ft, Ft, A) + _bilinear(F, F, pot * A)
    U *= 0.5 * grid.d / s0.rho**2
    return 0.5 * (U + U.T)


def compute_W(system: kin.ParticleSystem, states, grid: QuadratureGrid) -> np.ndarray:
    phi = tabulate(states, grid).phi
    W = _bilinear(phi, phi, _w_weighted(system, grid)) / states[0].rho
    return 0.5 * (W + W.T)


def t_prefactor(J: int, m: int, mp: int) -> float:
    val = J * (J + 1) - m * mp
    if val < 0:
        return 0.0
    return math.sqrt(val) * (math.sqrt(2.0) if m == 1 else 1.0)


def compute_T(upper, lower, grid: QuadratureGrid, J: int) -> np.ndarray:
    """``T_{i m, j m-1}`` for ``upper`` states of projection ``m`` and ``lower`` ones of ``m-1``.

    The kernel ``(1+t^2)(-d/dvartheta + m' cot vartheta)`` acts on the lower
    state; ``d/dvartheta`` at fixed ``|t|`` goes through ``(xi, eta)``.
    """
    if J == 0 or not upper or not lower:
        return np.zeros((len(upper), len(lower)))
    m, mp = upper[0].m, lower[0].m
    if mp != m - 1:
        raise ValidationError("T couples m to m-1")
    pref = t_prefactor(J, m, mp)
    up = tabulate(upper, grid).phi
    lo = tabulate(lower, grid)
    sh = np.sinh(grid.u)[:, None]
    st = np.sin(grid.theta)[None, :]
    mr1 = grid.t1 * grid.measure_over_r1
    mr2 = grid.t2 * grid.measure_over_r2
    Xu_Y = lo.Xu[:, :, None] * lo.Y[:, None, :]
    X_Yt = lo.X[:, :, None] * lo.Yt[:, None, :]
    # measure * d(phi)/d(vartheta)
    dphi = 0.5 * (st * Xu_Y * (mr2 - mr1) + sh * X_Yt * (mr1 + mr2))
    T = 1.0 + grid.t2sq
    kernel = -dphi
    if mp != 0:
        kernel = kernel + mp * (grid.z / grid.perp) * lo.phi * grid.measure
    return pref * _bilinear(up, kernel, T)


# --- assembly over a rho grid ----------------------------------------------


@dataclass(frozen=True)
class BasisSpec:
    """Truncated CSF set: ``(m, n_xi, n_eta)`` triples in channel order."""

    states: tuple

    @property
    def ms(self):
        return sorted({s[0] for s in self.states})

    def indices(self, m: int):
        return [k for k, s in enumerate(self.states) if s[0] == m]


@dataclass
class CouplingPoint:
    rho: float
    eps: dict
    blocks: dict  # m -> {family: matrix}
    T: dict  # (m, m-1) -> matrix
    diagnostics: dict


def couplings_at(system: kin.ParticleSystem, spec: BasisSpec, rho: float, J: int, tol: float = 1e-10,
                 guesses: dict | None = None, points: int = 16, step: float | None = None) -> CouplingPoint:
    guesses = guesses or {}
    states = {q: csf.solve_state(system, rho, q[0], q[1], q[2], eps_guess=guesses.get(q)) for q in spec.states}
    grid = build_grid(system, list(states.values()), tol=tol, points=points)
    blocks, diag = {}, {"grid_points": grid.points, "q_residual": 0.0}
    by_m = {m: [states[q] for q in spec.states if q[0] == m] for m in spec.ms}
    for m, group in by_m.items():
        P, Q, res = compute_PQ(system, group, grid, step=step)
        diag["q_residual"] = max(diag["q_residual"], res)
        blocks[m] = {"P": P, "Q": Q, "R": compute_R(group, grid, J), "U": compute_U(group, grid),
                     "W": compute_W(system, group, grid)}
    T = {}
    if J > 0:
        for m in spec.ms:
            if m - 1 in by_m:
                T[(m, m - 1)] = compute_T(by_m[m], by_m[m - 1], grid, J)
    eps = {q: s.eps for q, s in states.items()}
    return CouplingPoint(rho, eps, blocks, T, diag)


def _worker(args):
    system, spec, rho, J, tol, points = args
    return couplings_at(system, spec, rho, J, tol=tol, points=points)


@dataclass
class CouplingSet:
    system: kin.ParticleSystem
    spec: BasisSpec
    J: int
    rhos: np.ndarray
    points: list

    def family(self, name: str, m: int) -> np.ndarray:
        """Stack of one family over the rho grid, shape ``(n_rho, n, n)``."""
        return np.array([p.blocks[m][name] for p in self.points])

    def t_block(self, m: int, mp: int) -> np.ndarray:
        return np.array([p.T[(m, mp)] for p in self.points])

    def full(self, name: str) -> np.ndarray:
        """Family embedded in the full channel space (block diagonal in ``m``)."""
        n = len(self.spec.states)
        out = np.zeros((len(self.points), n, n))
        for m in self.spec.ms:
            idx = self.spec.indices(m)
            out[:, np.ix_(idx, idx)[0], np.ix_(idx, idx)[1]] = self.family(name, m)
        return out

    def full_T(self) -> np.ndarray:
        """Symmetric rotational coupling ``T`` over the full channel space."""
        n = len(self.spec.states)
        out = np.zeros((len(self.points), n, n))
        for (m, mp) in (self.points[0].T if self.points else {}):
            iu, il = self.spec.indices(m), self.spec.indices(mp)
            blk = self.t_block(m, mp)
            out[:, np.ix_(iu, il)[0], np.ix_(iu, il)[1]] = blk
            out[:, np.ix_(il, iu)[0], np.ix_(il, iu)[1]] = np.transpose(blk, (0, 2, 1))
        return out

    def subset(self, states) -> "CouplingSet":
        """Couplings of a sub-basis; every family restricts to the matching submatrix."""
        states = tuple(tuple(q) for q in states)
        missing = [q for q in states if q not in self.spec.states]
        if missing:
            raise ValidationError(f"states {missing} are not in this coupling set")
        spec = BasisSpec(states)
        old = {m: self.spec.indices(m) for m in self.spec.ms}
        # position of each kept state inside its old m block
        pick = {m: [old[m].index(self.spec.states.index(q)) for q in states if q[0] == m] for m in spec.ms}
        points = []
        for p in self.points:
            blocks = {m: {f: p.blocks[m][f][np.ix_(pick[m], pick[m])] for f in FAMILIES} for m in spec.ms}
            T = {(m, mp): M[np.ix_(pick[m], pick[mp])] for (m, mp), M in p.T.items()
                 if m in pick and mp in pick}
            eps = {q: e for q, e in p.eps.items() if q in states}
            points.append(CouplingPoint(p.rho, eps, blocks, T, dict(p.diagnostics)))
        return CouplingSet(self.system, spec, self.J, self.rhos.copy(), points)

    def to_records(self):
        """``(rho, matrix, m, row, col, value)`` rows; structural zeros omitted."""
        rows = []
        for p in self.points:
            for m in self.spec.ms:
                for name in FAMILIES:
                    if name == "R" and rotor_prefactor(self.J, m) == 0.0:
                        continue
                    M = p.blocks[m][name]
                    for i in range(M.shape[0]):
                        for j in range(M.shape[1]):
                            if name == "Q" and i == j:
                                continue
                            rows.append({"rho": p.rho, "matrix": name, "m": m, "row": i, "col": j,
                                         "value": float(M[i, j])})
            for (m, mp), M in sorted(p.T.items()):
                for i in range(M.shape[0]):
                    for j in range(M.shape[1]):
                        rows.append({"rho": p.rho, "matrix": "T", "m": m, "mp": mp, "row": i, "col": j,
                                     "value": float(M[i, j])})
        return rows

    def to_json(self, **extra) -> str:
        doc = {"J": self.J, "system": self.system.to_dict(), "basis": [list(s) for s in self.spec.states],
               "rho": [float(r) for r in self.rhos], "entries": self.to_records()}
        doc.update(extra)
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CouplingSet":
        doc = json.loads(text)
        s = doc["system"]
        system = kin.build_system(s["m1"], s["m2"], s["m3"], s["Z1"], s["Z2"], allow_zero_charge=True)
        spec = BasisSpec(tuple(tuple(q) for q in doc["basis"]))
        J = doc["J"]
        rhos = np.array(doc["rho"])
        pos = {float(r): k for k, r in enumerate(rhos)}
        points = []
        for r in rhos:
            blocks = {m: {f: np.zeros((len(spec.indices(m)),) * 2) for f in FAMILIES} for m in spec.ms}
            T = {}
            if J > 0:
                for m in spec.ms:
                    if m - 1 in spec.ms:
                        T[(m, m - 1)] = np.zeros((len(spec.indices(m)), len(spec.indices(m - 1))))
            points.append(CouplingPoint(float(r), {}, blocks, T, {}))
        for e in doc["entries"]:
            p = points[pos[e["rho"]]]
            if e["matrix"] == "T":
                p.T[(e["m"], e["mp"])][e["row"], e["col"]] = e["value"]
            else:
                p.blocks[e["m"]][e["matrix"]][e["row"], e["col"]] = e["value"]
        return cls(system, spec, J, rhos, points)


def compute_coupling_set(system: kin.ParticleSystem, spec: BasisSpec, rhos, J: int = 0, tol: float = 1e-10,
                         points: int = 16, jobs: int = 1) -> CouplingSet:
    rhos = np.asarray(sorted(float(r) for r in rhos))
    if rhos.size == 0 or rhos[0] <= 0.0:
        raise ValidationError("rho grid must be positive and nonempty")
    args = [(system, spec, float(r), J, tol, points) for r in rhos]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            pts = list(ex.map(_worker, args))
    else:
        pts = [_worker(a) for a in args]
    return CouplingSet(system, spec, J, rhos, pts)
