"""Particle data, reduced masses and internal-coordinate transformations.

Particles 1 and 2 carry positive charges ``Z1``, ``Z2``; particle 3 has charge -1.
All quantities are in atomic units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ContinuumState,
    DegenerateCharges,
    GeometryViolation,
    IdenticalParticles,
    NonPositiveInput,
)

DEGENERACY_TOL = 1e-12
GEOMETRY_TOL = 1e-12


@dataclass(frozen=True)
class ReducedMasses:
    M: float
    mu: float
    mu1: float
    mu2: float
    M1: float
    M2: float

    def mu_alpha(self, alpha: int) -> float:
        return self.mu1 if alpha == 1 else self.mu2

    def M_alpha(self, alpha: int) -> float:
        return self.M1 if alpha == 1 else self.M2


@dataclass(frozen=True)
class TGeometry:
    """Positions of the two Coulomb centres on the axis of t-space.

    Centre 1 sits at ``z = -t1`` and centre 2 at ``z = +t2``.
    """

    t1: float
    t2: float

    @property
    def d(self) -> float:
        return self.t1 + self.t2

    @property
    def centre(self) -> float:
        # midpoint of the foci on the z axis
        return 0.5 * (self.t2 - self.t1)


@dataclass(frozen=True)
class ParticleSystem:
    m1: float
    m2: float
    m3: float
    Z1: float
    Z2: float
    Z3: float = -1.0
    masses: ReducedMasses = field(init=False, repr=False, compare=False)
    geometry: TGeometry = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rm = reduced_masses_from(self.m1, self.m2, self.m3)
        object.__setattr__(self, "masses", rm)
        t1 = math.sqrt(rm.mu * rm.M) / self.m1
        t2 = math.sqrt(rm.mu * rm.M) / self.m2
        object.__setattr__(self, "geometry", TGeometry(t1, t2))

    def Z(self, alpha: int) -> float:
        return self.Z1 if alpha == 1 else self.Z2

    def m(self, alpha: int) -> float:
        return self.m1 if alpha == 1 else self.m2

    def to_dict(self) -> dict:
        return {"m1": self.m1, "m2": self.m2, "m3": self.m3, "Z1": self.Z1, "Z2": self.Z2}


def reduced_masses_from(m1: float, m2: float, m3: float) -> ReducedMasses:
    total = m1 + m2 + m3
    return ReducedMasses(
        M=m1 * m2 / (m1 + m2),
        mu=m3 * (m1 + m2) / total,
        mu1=m1 * m3 / (m1 + m3),
        mu2=m2 * m3 / (m2 + m3),
        M1=m2 * (m1 + m3) / total,
        M2=m1 * (m2 + m3) / total,
    )


def build_system(m1, m2, m3, Z1, Z2, *, allow_zero_charge: bool = False) -> ParticleSystem:
    """Validate the particle data and return a :class:`ParticleSystem`.

    ``allow_zero_charge`` admits ``Z2 = 0`` (or ``Z1 = 0``), the one-centre
    reduction used by the closed-form checks. Physical runs leave it off.
    """
    m1, m2, m3, Z1, Z2 = (float(v) for v in (m1, m2, m3, Z1, Z2))
    if min(m1, m2, m3) <= 0.0:
        raise NonPositiveInput(f"masses must be positive, got {(m1, m2, m3)}")
    if allow_zero_charge:
        if min(Z1, Z2) < 0.0 or max(Z1, Z2) <= 0.0:
            raise NonPositiveInput(f"charges must be non-negative, got {(Z1, Z2)}")
    elif min(Z1, Z2) <= 0.0:
        raise NonPositiveInput(f"charges must be positive, got {(Z1, Z2)}")
    if m1 == m2 and Z1 == Z2:
        raise IdenticalParticles("particles 1 and 2 are identical")
    system = ParticleSystem(m1, m2, m3, Z1, Z2)
    rm = system.masses
    if Z1 > 0.0 and Z2 > 0.0:
        ratio = (rm.mu2 / rm.mu1) ** 1.5
        if abs(Z1 / Z2 - ratio) < DEGENERACY_TOL:
            raise DegenerateCharges(
                f"Z1/Z2 = {Z1 / Z2!r} equals (mu2/mu1)^(3/2); effective charges coincide"
            )
    return system


def reduced_masses(system: ParticleSystem) -> ReducedMasses:
    return system.masses


def t_geometry(system: ParticleSystem) -> TGeometry:
    return system.geometry


# --- coordinates -----------------------------------------------------------


def _check_triangle(r1, r2, R):
    if R <= 0.0 or r1 < 0.0 or r2 < 0.0:
        raise GeometryViolation(f"distances must be non-negative with R > 0: {(r1, r2, R)}")
    scale = max(r1, r2, R)
    tol = GEOMETRY_TOL * scale
    if r1 + r2 < R - tol or r1 + R < r2 - tol or r2 + R < r1 - tol:
        raise GeometryViolation(f"triangle inequality violated for {(r1, r2, R)}")


def _triangle_area(a, b, c) -> float:
    """Heron's formula in Kahan's ordering, accurate for needle-shaped triangles."""
    a, b, c = sorted((a, b, c), reverse=True)
    q = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    return 0.25 * math.sqrt(max(q, 0.0))


def to_spheroidal(r1: float, r2: float, R: float) -> tuple[float, float]:
    _check_triangle(r1, r2, R)
    xi = (r1 + r2) / R
    eta = (r1 - r2) / R
    return max(xi, 1.0), min(max(eta, -1.0), 1.0)


def from_spheroidal(xi: float, eta: float, R: float) -> tuple[float, float]:
    return R * (xi + eta) / 2.0, R * (xi - eta) / 2.0


def triangle_positions(system: ParticleSystem, r1, r2, R) -> np.ndarray:
    """Centre-of-mass positions ``x1, x2, x3`` (rows) of a triangle in the xz plane."""
    _check_triangle(r1, r2, R)
    # particle 1 at origin, particle 2 on the z axis
    z3 = (r1**2 - r2**2 + R**2) / (2.0 * R)
    x3 = 2.0 * _triangle_area(r1, r2, R) / R
    pos = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, R], [x3, 0.0, z3]])
    w = np.array([system.m1, system.m2, system.m3])
    cm = w @ pos / w.sum()
    return pos - cm


def hyperradius(system: ParticleSystem, r1: float, r2: float, R: float) -> float:
    """Hyperradius from the interparticle distances."""
    _check_triangle(r1, r2, R)
    m1, m2, m3 = system.m1, system.m2, system.m3
    return math.sqrt(2.0 * (m1 * m3 * r1**2 + m2 * m3 * r2**2 + m1 * m2 * R**2) / (m1 + m2 + m3))


def hyperradius_jacobi(system: ParticleSystem, r1, r2, R) -> float:
    """Hyperradius from the Jacobi vectors, ``rho^2 = 2(M R^2 + mu r^2)``."""
    x = triangle_positions(system, r1, r2, R)
    m1, m2 = system.m1, system.m2
    Rvec = x[1] - x[0]
    rvec = x[2] - (m1 * x[0] + m2 * x[1]) / (m1 + m2)
    rm = system.masses
    return math.sqrt(2.0 * (rm.M * Rvec @ Rvec + rm.mu * rvec @ rvec))


def hyperradius_positions(system: ParticleSystem, r1, r2, R) -> float:
    """Hyperradius as ``sqrt(2 sum m_i x_i^2)`` in the centre-of-mass frame."""
    x = triangle_positions(system, r1, r2, R)
    w = np.array([system.m1, system.m2, system.m3])
    return math.sqrt(2.0 * float(np.sum(w * np.sum(x * x, axis=1))))


@dataclass(frozen=True)
class InternalPoint:
    r1: float
    r2: float
    R: float
    rho: float
    chi: float
    theta: float
    xi: float
    eta: float
    t: float


def internal_point(system: ParticleSystem, r1, r2, R) -> InternalPoint:
    """All representations of one internal configuration."""
    xi, eta = to_spheroidal(r1, r2, R)
    x = triangle_positions(system, r1, r2, R)
    m1, m2 = system.m1, system.m2
    Rvec = x[1] - x[0]
    rvec = x[2] - (m1 * x[0] + m2 * x[1]) / (m1 + m2)
    r = float(np.linalg.norm(rvec))
    rm = system.masses
    t = math.sqrt(rm.mu / rm.M) * r / R
    chi = 2.0 * math.atan(t)
    # atan2 keeps theta accurate near the collinear configurations
    theta = math.atan2(float(np.linalg.norm(np.cross(rvec, Rvec))), float(rvec @ Rvec)) if r > 0.0 else 0.0
    return InternalPoint(r1, r2, R, hyperradius(system, r1, r2, R), chi, theta, xi, eta, t)


def spheroidal_to_t(geom: TGeometry, xi, eta):
    """Map ``(xi, eta)`` to cylindrical ``(z, rho_perp)`` and ``(t, cos theta)`` in t-space."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    half = 0.5 * geom.d
    z = geom.centre + half * xi * eta
    perp = half * np.sqrt(np.clip((xi * xi - 1.0) * (1.0 - eta * eta), 0.0, None))
    t = np.hypot(z, perp)
    return z, perp, t


# --- rho-dependent parameters ----------------------------------------------


def effective_charges(system: ParticleSystem, rho: float) -> tuple[float, float]:
    rm = system.masses
    c = rho * math.sqrt(2.0) / rm.mu
    return c * system.Z1 * rm.mu1**1.5, c * system.Z2 * rm.mu2**1.5


@dataclass(frozen=True)
class CSFParameters:
    a: float
    b: float
    p: float


def charge_parameters(system: ParticleSystem, rho: float) -> tuple[float, float]:
    """``(a, b)`` of the separated equations; both grow linearly with ``rho``."""
    rm = system.masses
    c = rho / math.sqrt(2.0 * rm.mu * rm.M)
    s1 = system.Z1 * rm.mu1**1.5
    s2 = system.Z2 * rm.mu2**1.5
    return c * (s1 + s2), c * (s2 - s1)


def p_from_energy(system: ParticleSystem, eps: float) -> float:
    if eps >= 0.0:
        raise ContinuumState(f"continuum energy eps={eps} is not supported")
    return 0.5 * math.sqrt(-eps) * system.geometry.d


def energy_from_p(system: ParticleSystem, p: float) -> float:
    return -((2.0 * p / system.geometry.d) ** 2)


def csf_parameters(system: ParticleSystem, rho: float, eps: float) -> CSFParameters:
    a, b = charge_parameters(system, rho)
    return CSFParameters(a, b, p_from_energy(system, eps))


# --- channels --------------------------------------------------------------


def threshold(system: ParticleSystem, alpha: int, n: int) -> float:
    """Hydrogenic energy of level ``n`` of the atom (alpha, 3)."""
    return -system.Z(alpha) ** 2 * system.masses.mu_alpha(alpha) / (2.0 * n * n)


def scaled_threshold(system: ParticleSystem, alpha: int, n: int) -> float:
    """Large-rho limit of ``eps / rho^2`` for a state bound to centre ``alpha``."""
    rm = system.masses
    return -rm.mu_alpha(alpha) ** 3 * system.Z(alpha) ** 2 / (2.0 * n * n * rm.mu**2)


@dataclass(frozen=True)
class ChannelKinematics:
    alpha: int
    n: int
    E: float
    threshold: float
    is_open: bool
    q: float  # real momentum if open, decay constant kappa if closed
    k: float
    coulomb_eta: float  # (Z_alpha - 1) Z_other M_alpha / k, zero for closed channels
    gamma_bar: Callable[[float], float]

    @property
    def at_threshold(self) -> bool:
        return self.q == 0.0


def channel_kinematics(system: ParticleSystem, E: float, alpha: int, n: int) -> ChannelKinematics:
    if alpha not in (1, 2) or n < 1:
        raise ValueError(f"invalid channel alpha={alpha}, n={n}")
    Ean = threshold(system, alpha, n)
    Ma = system.masses.M_alpha(alpha)
    gap = E - Ean
    is_open = gap > 0.0
    q = math.sqrt(abs(gap))
    k = math.sqrt(2.0 * Ma) * q
    charge = (system.Z(alpha) - 1.0) * system.Z(3 - alpha)
    eta_c = charge * Ma / k if (is_open and charge != 0.0) else 0.0

    def gamma_bar(rho: float, _eta=eta_c, _q=q) -> float:
        if _eta == 0.0:
            return 0.0
        return _eta * math.log(2.0 * _q * rho)

    return ChannelKinematics(alpha, n, E, Ean, is_open, q, k, eta_c, gamma_bar)
