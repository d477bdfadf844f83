"""Symmetrized Wigner functions, the HSCS product basis and the three-pole net."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kinematics as kin
from .csf import ChannelLabel, CSFState
from .errors import IndexOutOfRange, MismatchedM, NullRotor, OutOfDomain


def wigner_small_d(J: int, K: int, m: int, beta):
    """``d^J_{Km}(beta)`` by three-term recursion in ``K`` from the closed-form edges.

    ``sqrt((J-K)(J+K+1)) d_{K+1} + sqrt((J+K)(J-K+1)) d_{K-1} = 2 (m - K cos beta) / sin beta * d_K``
    is run downward from ``K = J`` or upward from ``K = -J``, whichever reaches
    ``K`` without crossing ``m cos beta``; both directions then only traverse
    the growing side of the sequence.
    """
    if J < 0 or abs(K) > J or abs(m) > J:
        raise IndexOutOfRange(f"need |K|, |m| <= J, got J={J}, K={K}, m={m}")
    beta = np.asarray(beta, dtype=float)
    c, s = np.cos(0.5 * beta), np.sin(0.5 * beta)
    sb, cb = np.sin(beta), np.cos(beta)
    pole = np.abs(sb) < 1e-12
    safe = np.where(pole, 1.0, sb)
    lb = 0.5 * (math.lgamma(2 * J + 1) - math.lgamma(J + m + 1) - math.lgamma(J - m + 1))
    top = (-1.0) ** (J - m) * math.exp(lb) * c ** (J + m) * s ** (J - m)
    bottom = math.exp(lb) * c ** (J - m) * s ** (J + m)

    def down():
        above, cur = np.zeros_like(top), top
        for k in range(J, K, -1):
            nxt = (2.0 * (m - k * cb) / safe * cur - math.sqrt((J - k) * (J + k + 1)) * above) / math.sqrt(
                (J + k) * (J - k + 1))
            above, cur = cur, nxt
        return cur

    def up():
        below, cur = np.zeros_like(bottom), bottom
        for k in range(-J, K):
            nxt = (2.0 * (m - k * cb) / safe * cur - math.sqrt((J + k) * (J - k + 1)) * below) / math.sqrt(
                (J - k) * (J + k + 1))
            below, cur = cur, nxt
        return cur

    out = np.where(K >= m * cb, down(), up())
    # the recursion divides by sin(beta); use the exact values at the poles
    if np.any(pole):
        exact = np.where(cb > 0.0, float(K == m), (-1.0) ** (J - m) * float(K == -m))
        out = np.where(pole, exact, out)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class RotorIndex:
    J: int
    K: int
    m: int
    parity: int  # lambda_p

    def __post_init__(self):
        if self.J < 0 or abs(self.K) > self.J or not 0 <= self.m <= self.J:
            raise IndexOutOfRange(f"invalid rotor indices {self}")
        if self.parity not in (1, -1):
            raise IndexOutOfRange(f"parity must be +1 or -1, got {self.parity}")

    @property
    def is_null(self) -> bool:
        return self.m == 0 and self.parity == -((-1) ** self.J)

    @property
    def amplitude(self) -> float:
        """``A^J_{Km}``."""
        return (-1.0) ** self.K * math.sqrt((2 * self.J + 1) / (1.0 + (self.m == 0))) / (4.0 * math.pi)


def wigner_D(J: int, K: int, m: int, Phi, Theta, phi):
    return np.exp(-1j * K * np.asarray(Phi)) * wigner_small_d(J, K, m, Theta) * np.exp(-1j * m * np.asarray(phi))


def symmetrized_D(rotor: RotorIndex, Phi, Theta, phi):
    r = rotor
    sign = r.parity * (-1.0) ** (r.J + r.m)
    return r.amplitude * (wigner_D(r.J, -r.K, r.m, Phi, Theta, phi)
                          + sign * wigner_D(r.J, -r.K, -r.m, Phi, Theta, phi))


@dataclass(frozen=True)
class HSCSIndex:
    rotor: RotorIndex
    csf: tuple  # (n_xi, n_eta) or a ChannelLabel
    m: int

    def __post_init__(self):
        if self.rotor.m != self.m:
            raise MismatchedM(f"rotor m={self.rotor.m} differs from CSF m={self.m}")
        if isinstance(self.csf, ChannelLabel) and self.csf.m != self.m:
            raise MismatchedM(f"label m={self.csf.m} differs from CSF m={self.m}")


def weight(rho, t):
    """``g = rho^5 (1+t^2)^-3``."""
    return np.asarray(rho, dtype=float) ** 5 / (1.0 + np.asarray(t, dtype=float) ** 2) ** 3


def volume_element(system: kin.ParticleSystem, rho, t):
    """Radial part of ``dR dr`` per ``drho dt``: ``(4 M mu)^{-3/2} g t^2``."""
    rm = system.masses
    return (4.0 * rm.M * rm.mu) ** -1.5 * weight(rho, t) * np.asarray(t, dtype=float) ** 2


@dataclass(frozen=True)
class HSCSFunction:
    index: HSCSIndex
    state: CSFState

    def __call__(self, Phi, Theta, phi, xi, eta):
        return symmetrized_D(self.index.rotor, Phi, Theta, phi) * self.state.evaluate(xi, eta)


def assemble(rotor: RotorIndex, state: CSFState, label: ChannelLabel | None = None) -> HSCSFunction:
    if rotor.is_null:
        raise NullRotor(f"m=0 with parity {rotor.parity} vanishes identically for J={rotor.J}")
    if rotor.m != state.m:
        raise MismatchedM(f"rotor m={rotor.m} differs from CSF m={state.m}")
    csf_part = label if label is not None else (state.n_xi, state.n_eta)
    return HSCSFunction(HSCSIndex(rotor, csf_part, state.m), state)


# --- figure export -----------------------------------------------------------


def net_point(system: kin.ParticleSystem, rho0: float, xi, eta) -> np.ndarray:
    """Point of the sphere of radius ``rho0`` carrying spheroidal coordinates ``(xi, eta)``."""
    z, perp, t = kin.spheroidal_to_t(system.geometry, xi, eta)
    chi = 2.0 * np.arctan(t)
    ct = np.divide(z, t, out=np.ones_like(t), where=t > 0)
    st = np.divide(perp, t, out=np.zeros_like(t), where=t > 0)
    sc = np.sin(chi)
    return rho0 * np.stack([sc * ct, sc * st, np.cos(chi)], axis=-1)


def three_pole_net(system: kin.ParticleSystem, rho0: float, n_xi_lines: int = 8, n_eta_lines: int = 9,
                   samples: int = 200, xi_max: float | None = None) -> dict:
    """Iso-``xi`` and iso-``eta`` polylines on the sphere plus the three coalescence poles."""
    if rho0 <= 0.0:
        raise OutOfDomain("rho0 must be positive")
    geom = system.geometry
    if xi_max is None:
        xi_max = 1.0 + 20.0 / geom.d
    curves = []
    # cosine spacing clusters samples near the poles, where the curves bend hardest
    s = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, samples)))
    eta_s = -1.0 + 2.0 * s
    xi_s = 1.0 + (xi_max - 1.0) * s**2
    for k, xv in enumerate(1.0 + (xi_max - 1.0) * (np.arange(1, n_xi_lines + 1) / n_xi_lines) ** 2):
        pts = net_point(system, rho0, np.full_like(eta_s, xv), eta_s)
        curves.append({"curve_id": f"xi_{k}", "xi": float(xv), "points": pts.tolist()})
    for k, ev in enumerate(np.linspace(-1.0, 1.0, n_eta_lines)):
        pts = net_point(system, rho0, xi_s, np.full_like(xi_s, ev))
        curves.append({"curve_id": f"eta_{k}", "eta": float(ev), "points": pts.tolist()})
    poles = []
    for name, t, sign in (("13", geom.t1, -1.0), ("23", geom.t2, 1.0)):
        chi = 2.0 * math.atan(t)
        poles.append({"name": name, "theta": 0.0 if sign > 0 else math.pi, "t": t,
                      "point": [rho0 * math.sin(chi) * sign, 0.0, rho0 * math.cos(chi)]})
    poles.append({"name": "12", "theta": None, "t": math.inf, "point": [0.0, 0.0, -rho0]})
    return {"rho0": rho0, "curves": curves, "poles": poles}
