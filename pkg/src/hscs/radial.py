"""Coupled radial equations, their propagation from the origin and the K-matrix.

In basis order the radial functions obey

    g'' = [3/(4 rho^2) - E + Q' + P + U + W + (R + T)/rho^2] g + 2 Q g'

with ``Q_ij = <d phi_i|phi_j>``. The doubled first-order system is propagated
with column re-orthonormalization and matched to standing waves at two radii.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import jv, jvp, yv, yvp

from . import kinematics as kin
from ._core import propagate
from .basis import HSCSIndex, RotorIndex
from .coupling import CouplingSet
from .csf import ChannelLabel
from .errors import (
    AboveBreakup,
    ClosedChannelContamination,
    IllConditionedMatch,
    LinearDependence,
    NoOpenChannel,
    RhoOutOfRange,
    SingularMatrix,
    StiffnessFailure,
    ValidationError,
)

CLOSED_LOG_AMPLITUDE = -7.0
MATCH_FRACTION = 0.98
MAX_CONDITION = 1e12


# --- channels ----------------------------------------------------------------


@dataclass(frozen=True)
class Channel:
    position: int  # row of the coupling matrices
    index: HSCSIndex
    label: ChannelLabel
    kin: kin.ChannelKinematics

    @property
    def threshold(self) -> float:
        return self.kin.threshold

    @property
    def is_open(self) -> bool:
        return self.kin.is_open

    @property
    def q(self) -> float:
        """Momentum of an open channel, decay constant of a closed one."""
        return self.kin.q

    def describe(self) -> dict:
        lab = self.label
        return {"position": self.position, "alpha": lab.alpha, "n": lab.n, "s": lab.s, "m": lab.m,
                "s_verified": lab.s_verified, "threshold": self.threshold, "open": self.is_open,
                "q" if self.is_open else "kappa": self.q}


@dataclass(frozen=True)
class ChannelSpace:
    E: float
    J: int
    channels: tuple

    @property
    def open(self) -> list:
        return [c for c in self.channels if c.is_open]

    @property
    def closed(self) -> list:
        return [c for c in self.channels if not c.is_open]

    @property
    def n_open(self) -> int:
        return len(self.open)

    @property
    def n_total(self) -> int:
        return len(self.channels)


def build_channel_space(system: kin.ParticleSystem, E: float, labeled, J: int = 0, K: int = 0,
                        parity: int | None = None) -> ChannelSpace:
    """Classify the labeled basis at energy ``E``.

    ``labeled`` lists ``(state, label)`` pairs in coupling-basis order, with
    ``state = (m, n_xi, n_eta)``. Channels come back open first, each group
    by ascending threshold.
    """
    if E >= 0.0:
        raise AboveBreakup(f"E = {E} is at or above the breakup threshold 0")
    parity = (-1) ** J if parity is None else parity
    chans = []
    for pos, (state, label) in enumerate(labeled):
        m, n_xi, n_eta = state
        if label.m != m:
            raise ValidationError(f"label {label} does not match state {state}")
        index = HSCSIndex(RotorIndex(J, K, m, parity), (n_xi, n_eta), m)
        chans.append(Channel(pos, index, label, kin.channel_kinematics(system, E, label.alpha, label.n)))
    chans.sort(key=lambda c: (not c.is_open, c.threshold, c.position))
    space = ChannelSpace(float(E), J, tuple(chans))
    if space.n_open == 0:
        raise NoOpenChannel(f"no open channel at E = {E}; lowest threshold {chans[0].threshold:.6g}")
    return space


# --- the operator --------------------------------------------------------------


def _piecewise(spline) -> np.ndarray:
    """PPoly coefficients as ``(nseg, 4, N, N)``, highest power first."""
    c = spline.c
    if c.shape[0] < 4:
        c = np.concatenate([np.zeros((4 - c.shape[0],) + c.shape[1:]), c])
    return np.ascontiguousarray(np.moveaxis(c, 0, 1))


@dataclass
class RadialOperator:
    knots: np.ndarray
    a_coef: np.ndarray  # potential part of A(rho), without 3/(4 rho^2) - E
    b_coef: np.ndarray  # 2 Q
    E: float
    J: int
    centrifugal: float = 0.75

    @property
    def size(self) -> int:
        return self.a_coef.shape[-1]

    def _check(self, rho):
        lo, hi = self.knots[0], self.knots[-1]
        if not lo * (1 - 1e-12) <= rho <= hi * (1 + 1e-12):
            raise RhoOutOfRange(f"rho = {rho} outside the coupling grid [{lo}, {hi}]")

    def _eval(self, coef, rho):
        self._check(rho)
        i = int(np.clip(np.searchsorted(self.knots, rho, side="right") - 1, 0, self.knots.size - 2))
        dx = rho - self.knots[i]
        c = coef[i]
        return ((c[0] * dx + c[1]) * dx + c[2]) * dx + c[3]

    def A(self, rho: float) -> np.ndarray:
        return self._eval(self.a_coef, rho) + (self.centrifugal / rho**2 - self.E) * np.eye(self.size)

    def B(self, rho: float) -> np.ndarray:
        return self._eval(self.b_coef, rho)

    def matrix(self, rho: float) -> np.ndarray:
        """First-order system matrix acting on ``[g; g']``."""
        n = self.size
        out = np.zeros((2 * n, 2 * n))
        out[:n, n:] = np.eye(n)
        out[n:, :n] = self.A(rho)
        out[n:, n:] = self.B(rho)
        return out

    def residual(self, rho: float, g, dg, d2g) -> np.ndarray:
        """``g'' - A g - B g'``; zero for a solution, the forcing for a manufactured one."""
        return np.asarray(d2g) - self.A(rho) @ np.asarray(g) - self.B(rho) @ np.asarray(dg)

    def diagonal(self) -> "RadialOperator":
        """Same diagonal potentials with every channel coupling removed."""
        n = self.size
        mask = np.eye(n)
        return RadialOperator(self.knots, self.a_coef * mask, np.zeros_like(self.b_coef), self.E, self.J,
                              self.centrifugal)


def potential_matrix(cs: CouplingSet) -> np.ndarray:
    """``P + U + W + (R + T)/rho^2`` on the coupling grid, basis order."""
    V = cs.full("P") + cs.full("U") + cs.full("W")
    if cs.J > 0:
        V = V + (cs.full("R") + cs.full_T()) / cs.rhos[:, None, None] ** 2
    return V


def assemble_operator(cs: CouplingSet, E: float, J: int | None = None) -> RadialOperator:
    """Cubic-spline closure of the radial system; ``dQ/drho`` is the spline derivative of ``Q``."""
    if J is not None and J != cs.J:
        raise ValidationError(f"coupling set was computed for J={cs.J}, not J={J}")
    if cs.rhos.size < 4:
        raise ValidationError("need at least four rho points for cubic interpolation")
    Q = CubicSpline(cs.rhos, cs.full("Q"), axis=0)
    V = CubicSpline(cs.rhos, potential_matrix(cs), axis=0)
    a_coef = _piecewise(V) + _piecewise(Q.derivative())
    b_coef = 2.0 * _piecewise(Q)
    return RadialOperator(np.asarray(cs.rhos, float), a_coef, b_coef, float(E), cs.J)


# --- propagation ---------------------------------------------------------------


@dataclass
class SegmentRecord:
    rho_a: float
    rho_b: float
    transform: np.ndarray  # upper triangular, normalized
    log_scale: float
    accepted: int
    rejected: int
    min_ratio: float


@dataclass
class PropagatorState:
    """Orthonormal solution columns at ``rho`` plus the log of every segment.

    The unnormalized continuation of the columns at ``snapshots[k]`` equals the
    columns at ``snapshots[k+1]`` times ``exp(log_scale) * transform``.
    """

    rho: float
    Y: np.ndarray
    rhos: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    log: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.Y.shape[0] // 2

    @property
    def steps(self) -> int:
        return sum(r.accepted for r in self.log)

    def at(self, rho: float) -> np.ndarray:
        k = int(np.argmin(np.abs(np.asarray(self.rhos) - rho)))
        if abs(self.rhos[k] - rho) > 1e-9 * rho:
            raise RhoOutOfRange(f"no snapshot at rho = {rho}")
        return self.snapshots[k]

    def coefficients_back(self, x: np.ndarray, rho: float, start: float | None = None):
        """Carry coefficients ``x`` on the snapshot at ``start`` (default: the end) back to ``rho``.

        Returns ``(coeffs, log_factor)``: the same solution at ``rho`` is
        ``snapshot @ coeffs * exp(log_factor)``.
        """
        start = self.rho if start is None else start
        c = np.array(x, dtype=float)
        log_factor = 0.0
        for rec in reversed(self.log):
            if rec.rho_b > start * (1 + 1e-12):
                continue
            if rec.rho_b <= rho * (1 + 1e-12):
                break
            c = np.linalg.solve(rec.transform, c)
            log_factor -= rec.log_scale
            big = np.max(np.abs(c))
            if big > 0:
                c /= big
                log_factor += math.log(big)
        return c, log_factor


def _segment_edges(knots, rho0, rho_max, extra):
    inner = [k for k in knots if rho0 < k < rho_max]
    return sorted(set([rho0, rho_max] + inner + [e for e in extra if rho0 < e < rho_max]))


def seed_columns(n: int, rho0: float, irregular: float = 0.0) -> np.ndarray:
    """Regular ``rho^{3/2}`` columns, optionally with a ``rho^{-1/2}`` admixture."""
    eye = np.eye(n)
    g = rho0**1.5 * eye + irregular * rho0**-0.5 * eye
    dg = 1.5 * rho0**0.5 * eye - 0.5 * irregular * rho0**-1.5 * eye
    return np.vstack([g, dg])


def integrate(op: RadialOperator, space: ChannelSpace | None, rho0: float, rho_max: float,
              rtol: float = 1e-10, irregular: float = 0.0, checkpoints=()) -> PropagatorState:
    """Propagate ``N`` regular columns from ``rho0`` to ``rho_max``.

    Snapshots are kept at every coupling knot, at the match radius
    ``0.98 rho_max`` and at any extra ``checkpoints``.
    """
    op._check(rho0)
    op._check(rho_max)
    if not 0.0 < rho0 < rho_max:
        raise ValidationError("need 0 < rho0 < rho_max")
    if space is not None and space.n_total != op.size:
        raise ValidationError("channel space and operator sizes differ")
    n = op.size
    Y = seed_columns(n, rho0, irregular)
    Y, _ = np.linalg.qr(Y)
    extra = [MATCH_FRACTION * rho_max] + [float(c) for c in checkpoints]
    extra += [MATCH_FRACTION * float(c) for c in checkpoints]
    edges = _segment_edges(op.knots, rho0, rho_max, extra)
    state = PropagatorState(rho0, Y, [rho0], [Y.copy()], [])
    h = None
    for a, b in zip(edges[:-1], edges[1:]):
        try:
            Y, acc, rej, ratio, T, ls = propagate(op.knots, op.a_coef, op.b_coef, op.E, op.centrifugal,
                                                  a, b, Y, rtol, h)
        except FloatingPointError as exc:
            raise StiffnessFailure(str(exc)) from exc
        except RuntimeError as exc:
            raise StiffnessFailure(f"{exc} between rho={a:.6g} and {b:.6g}") from exc
        if ratio < 1e-14:
            raise LinearDependence(f"solution columns lost rank near rho={b:.6g} (ratio {ratio:.2e})")
        state.log.append(SegmentRecord(a, b, T, ls, acc, rej, ratio))
        state.rhos.append(b)
        state.snapshots.append(Y.copy())
        h = None
    state.rho = rho_max
    state.Y = Y
    return state


# --- asymptotic matching ----------------------------------------------------------


@dataclass(frozen=True)
class StandingWaves:
    """Regular / irregular reference pair of one open channel and its derivatives."""

    s: float
    ds: float
    c: float
    dc: float


def tail_strength(op: RadialOperator, space: ChannelSpace, ch: Channel, rho: float) -> float:
    """``rho^2`` times the effective long-range potential of an open channel at ``rho``.

    Besides the diagonal potential, eliminating each closed channel ``c`` at
    second order adds ``-(A_fc A_cf + q^2 B_fc^2) / (A_cc + q^2)``; with
    ``Q ~ 1/rho`` between same-centre states this is an inverse-square term too.
    """
    A, B = op.A(rho), op.B(rho)
    f = ch.position
    v = A[f, f] + op.E - ch.threshold
    for c in space.closed:
        k = c.position
        v -= (A[f, k] * A[k, f] + ch.q**2 * B[f, k] ** 2) / (A[k, k] + ch.q**2)
    return rho**2 * v


@dataclass(frozen=True)
class Tail:
    """Long-range potential ``c / rho^2 + d / rho^3`` of one open channel."""

    c: float
    d: float

    @property
    def nu(self) -> float:
        return math.sqrt(max(self.c + 0.25, 0.0))


def fit_tail(op: RadialOperator, space: ChannelSpace, ch: Channel, rho: float, spread: float = 0.8) -> Tail:
    r1, r2 = rho, spread * rho
    s1, s2 = tail_strength(op, space, ch, r1), tail_strength(op, space, ch, r2)
    d = (s1 - s2) / (1.0 / r1 - 1.0 / r2)
    return Tail(s1 - d / r1, d)


def standing_waves(ch: Channel, J: int, rho: float, tail: Tail | None = None) -> StandingWaves:
    """``sin`` and ``cos`` of ``q rho - gamma_bar - pi J/2`` continued through the long-range tail.

    Without a Coulomb tail and with ``tail`` given, the pair is the
    Riccati-Bessel combination that solves ``g'' = [(nu^2 - 1/4)/rho^2 - q^2] g``
    and tends to the plain trigonometric pair; the ``d / rho^3`` remainder
    enters as the WKB phase ``d / (4 q rho^2)`` still to be accumulated.
    """
    q = ch.q
    x = q * rho
    if ch.kin.coulomb_eta != 0.0 or tail is None:
        th = x - ch.kin.gamma_bar(rho) - 0.5 * math.pi * J
        dth = q - ch.kin.coulomb_eta / rho
        return StandingWaves(math.sin(th), dth * math.cos(th), math.cos(th), -dth * math.sin(th))
    nu = tail.nu
    psi = 0.5 * math.pi * (J - nu) + 0.25 * math.pi
    cp, sp = math.cos(psi), math.sin(psi)
    f = math.sqrt(0.5 * math.pi * x)
    df = 0.5 * f / rho
    J_, Y_ = jv(nu, x), yv(nu, x)
    dJ, dY = q * jvp(nu, x), q * yvp(nu, x)
    s = f * (J_ * cp + Y_ * sp)
    c = f * (J_ * sp - Y_ * cp)
    ds = df * (J_ * cp + Y_ * sp) + f * (dJ * cp + dY * sp)
    dc = df * (J_ * sp - Y_ * cp) + f * (dJ * sp - dY * cp)
    eps = tail.d / (4.0 * q * rho**2)
    deps = -tail.d / (2.0 * q * rho**3)
    ce, se = math.cos(eps), math.sin(eps)
    s2, c2 = s * ce + c * se, c * ce - s * se
    ds2 = ds * ce + dc * se + deps * c2
    dc2 = dc * ce - ds * se - deps * s2
    return StandingWaves(s2, ds2, c2, dc2)


@dataclass
class MatchResult:
    K: np.ndarray
    coefficients: np.ndarray  # end-point column coefficients, one column per input channel
    residual: float
    condition: float
    closed_log_amplitude: float
    closed_log_slope: list


def _match_rows(op, space, G, D, rho, tails, driven):
    """Rows of the match at one radius; unknowns are ``x`` then ``K~`` (columns of ``K`` times ``sqrt(q_i/q_f)``)."""
    n, n_open = op.size, space.n_open
    waves = [standing_waves(ch, space.J, rho, t) for ch, t in zip(space.open, tails)]
    rows, rhs = [], []
    for k, (ch, w) in enumerate(zip(space.open, waves)):
        scale = 1.0 / ch.q
        r_val = np.zeros(n + n_open)
        r_der = np.zeros(n + n_open)
        r_val[:n] = G[ch.position]
        r_der[:n] = D[ch.position] * scale
        r_val[n + k] = -w.c
        r_der[n + k] = -w.dc * scale
        e = np.zeros(n_open)
        e[k] = 1.0
        rows += [r_val, r_der]
        rhs += [e * w.s, e * w.ds * scale]
    A, B = op.A(rho), op.B(rho)
    for ch in space.closed:
        # (g' + kappa g) of the closed row equals that of the tail driven by the open waves
        c, kap = ch.position, ch.q
        r = np.zeros(n + n_open)
        r[:n] = (D[c] + kap * G[c]) / kap
        b = np.zeros(n_open)
        if driven:
            for k, (o, w, t) in enumerate(zip(space.open, waves, tails)):
                f = o.position
                den = A[c, c] + o.q**2
                curv = (t.c / rho**2 if t is not None else 0.0) - o.q**2

                def push(val, der):
                    p = -(A[c, f] * val + B[c, f] * der) / den
                    dp = -(A[c, f] * der + B[c, f] * curv * val) / den
                    return (dp + kap * p) / kap

                r[n + k] = -push(w.c, w.dc)
                b[k] = push(w.s, w.ds)
        rows.append(r)
        rhs.append(b)
    return rows, rhs


def _driven_closed(op, space, rho, tails, Kt) -> np.ndarray:
    """Closed-row values of the inverse-power tail driven by the fitted open waves, per input column."""
    A, B = op.A(rho), op.B(rho)
    waves = [standing_waves(ch, space.J, rho, t) for ch, t in zip(space.open, tails)]
    val = np.diag([w.s for w in waves]) + np.array([w.c for w in waves])[:, None] * Kt
    der = np.diag([w.ds for w in waves]) + np.array([w.dc for w in waves])[:, None] * Kt
    out = np.zeros((len(space.closed), space.n_open))
    for k, ch in enumerate(space.closed):
        c = ch.position
        for j, o in enumerate(space.open):
            f = o.position
            out[k] -= (A[c, f] * val[j] + B[c, f] * der[j]) / (A[c, c] + o.q**2)
    return out


def match(state: PropagatorState, space: ChannelSpace, op: RadialOperator, rho_max: float | None = None,
          tails: bool = True, closed_limit: float = CLOSED_LOG_AMPLITUDE) -> MatchResult:
    """Least-squares fit of the open rows to standing waves at ``rho_max`` and ``0.98 rho_max``.

    Each input column ``i`` must look like
    ``delta_fi s_f + (q_i/q_f)^{1/2} K_fi c_f`` in every open row ``f``, while
    closed rows carry no ``exp(kappa rho)`` component.
    """
    rho_b = state.rho if rho_max is None else rho_max
    rho_a = MATCH_FRACTION * rho_b
    n = state.size
    Yb = state.at(rho_b)
    Ya = state.at(rho_a)
    xa, la = state.coefficients_back(np.eye(n), rho_a, start=rho_b)
    Ga, Da = Ya[:n] @ xa * math.exp(la), Ya[n:] @ xa * math.exp(la)
    Gb, Db = Yb[:n], Yb[n:]
    fits = [fit_tail(op, space, ch, rho_b) if tails and ch.kin.coulomb_eta == 0.0 else None
            for ch in space.open]
    rows, rhs = [], []
    for G, D, r in ((Ga, Da, rho_a), (Gb, Db, rho_b)):
        ro, rh = _match_rows(op, space, G, D, r, fits, tails)
        rows += ro
        rhs += rh
    M = np.array(rows)
    R = np.array(rhs)
    sv = np.linalg.svd(M, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond > MAX_CONDITION:
        raise IllConditionedMatch(f"match matrix condition {cond:.3e}")
    sol, *_ = np.linalg.lstsq(M, R, rcond=None)
    residual = float(np.max(np.abs(M @ sol - R)))
    x = sol[:n]
    Kt = sol[n:]
    q = np.array([c.q for c in space.open])
    K = Kt * np.sqrt(q[:, None] / q[None, :])
    g_end = Gb @ x
    dg_end = Db @ x
    open_amp = max(float(np.max(np.abs(g_end[[c.position for c in space.open]]))), 1e-300)
    driven = _driven_closed(op, space, rho_b, fits, Kt) if tails else np.zeros((len(space.closed), space.n_open))
    closed_amp, slopes = 0.0, []
    for k, ch in enumerate(space.closed):
        row = g_end[ch.position]
        # only what the open waves do not drive counts as contamination
        closed_amp = max(closed_amp, float(np.max(np.abs(row - driven[k]))))
        with np.errstate(divide="ignore", invalid="ignore"):
            slopes.append(float(np.median(dg_end[ch.position] / row)))
    log_amp = math.log(closed_amp / open_amp) if closed_amp > 0 else -math.inf
    if log_amp > closed_limit:
        raise ClosedChannelContamination(
            f"closed-channel log-amplitude {log_amp:.2f} at rho={rho_b:.6g} exceeds {closed_limit}")
    return MatchResult(K, x, residual, cond, log_amp, slopes)


# --- K and S-tilde -----------------------------------------------------------------


def k_to_stilde(K, J: int) -> np.ndarray:
    """``(-1)^J (1 - iK)^{-1} (1 + iK)``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    eye = np.eye(K.shape[0])
    lhs = eye - 1j * K
    if np.linalg.cond(lhs) > 1e14:
        raise SingularMatrix("1 - iK is singular")
    return (-1.0) ** J * np.linalg.solve(lhs, eye + 1j * K)


def stilde_to_k(S, J: int) -> np.ndarray:
    """Inverse of :func:`k_to_stilde`: ``K = -i (S' - 1)(S' + 1)^{-1}`` with ``S' = (-1)^J S``."""
    S = (-1.0) ** J * np.atleast_2d(np.asarray(S, dtype=complex))
    eye = np.eye(S.shape[0])
    if np.linalg.cond(eye + S) > 1e14:
        raise SingularMatrix("S + 1 is singular; K has an infinite eigenvalue")
    K = -1j * np.linalg.solve((eye + S).T, (S - eye).T).T
    return K.real


def symmetry_defect(K) -> float:
    K = np.asarray(K)
    return float(np.max(np.abs(K - K.T))) if K.size else 0.0


def unitarity_defect(S) -> float:
    S = np.asarray(S)
    return float(np.linalg.norm(S @ S.conj().T - np.eye(S.shape[0]), 2))


# --- full solve -----------------------------------------------------------------


@dataclass
class RadialSolution:
    E: float
    J: int
    channels: list
    K: np.ndarray
    S_tilde: np.ndarray
    rho: np.ndarray  # snapshot radii
    g: np.ndarray  # (n_rho, n_basis, n_open) on the snapshot radii
    diagnostics: dict

    def to_dict(self) -> dict:
        return {"E": self.E, "J": self.J, "channels": self.channels,
                "K": self.K.tolist(),
                "S_tilde": {"re": self.S_tilde.real.tolist(), "im": self.S_tilde.imag.tolist()},
                "diagnostics": self.diagnostics}

    def to_json(self, **extra) -> str:
        doc = self.to_dict()
        doc.update(extra)
        return json.dumps(doc, indent=1, sort_keys=True)


ScatteringSolution = RadialSolution


def default_rho_max(cs: CouplingSet, space: ChannelSpace, factor: float = 3.0, ratio: float = 1e-6) -> float:
    """``factor`` times the radius beyond which open-open couplings stay below ``ratio * min|E - E_an|``."""
    pos = [c.position for c in space.open]
    gap = min(abs(space.E - c.threshold) for c in space.channels)
    if len(pos) < 2:
        return float(cs.rhos[-1])
    V = potential_matrix(cs)[:, pos][:, :, pos]
    Q = cs.full("Q")[:, pos][:, :, pos]
    off = np.abs(V) + np.abs(Q)
    off[:, range(len(pos)), range(len(pos))] = 0.0
    big = off.max(axis=(1, 2))
    above = np.nonzero(big >= ratio * gap)[0]
    start = cs.rhos[above[-1] + 1] if above.size and above[-1] + 1 < cs.rhos.size else cs.rhos[0]
    if above.size and above[-1] + 1 >= cs.rhos.size:
        raise RhoOutOfRange("open-channel couplings never fall below the decoupling threshold on this grid")
    return float(min(factor * start, cs.rhos[-1]))


def solve(cs: CouplingSet, space: ChannelSpace, rho0: float | None = None, rho_max: float | None = None,
          rtol: float = 1e-10, irregular: float = 0.0, tails: bool = True, decoupled: bool = False,
          closed_limit: float = CLOSED_LOG_AMPLITUDE) -> RadialSolution:
    """Propagate, match and convert: ``K``, ``S_tilde`` and their diagnostics."""
    op = assemble_operator(cs, space.E)
    if decoupled:
        op = op.diagonal()
    if rho_max is None:
        rho_max = default_rho_max(cs, space)
    if rho0 is None:
        rho0 = max(1e-3 * rho_max, float(cs.rhos[0]))
    half = 0.5 * rho_max
    state = integrate(op, space, rho0, rho_max, rtol=rtol, irregular=irregular, checkpoints=(half,))
    res = match(state, space, op, tails=tails, closed_limit=closed_limit)
    diag = {"rho0": rho0, "rho_max": rho_max, "steps": state.steps,
            "min_orthonormalization_ratio": min(r.min_ratio for r in state.log),
            "match_residual": res.residual, "match_condition": res.condition,
            "closed_log_amplitude": res.closed_log_amplitude,
            "closed_log_slope": [{"kappa": c.q, "slope": s} for c, s in zip(space.closed, res.closed_log_slope)]}
    try:
        half_res = match(state, space, op, rho_max=half, tails=tails, closed_limit=math.inf)
        diag["rho_max_sensitivity"] = float(np.max(np.abs(half_res.K - res.K)))
    except (IllConditionedMatch, RhoOutOfRange) as exc:  # pragma: no cover - diagnostic only
        diag["rho_max_sensitivity"] = f"unavailable: {exc}"
    S = k_to_stilde(res.K, space.J)
    diag["symmetry_defect"] = symmetry_defect(res.K)
    diag["unitarity_defect"] = unitarity_defect(S)
    g = np.empty((len(state.rhos), state.size, space.n_open))
    for k, r in enumerate(state.rhos):
        c, lf = state.coefficients_back(res.coefficients, r)
        g[k] = state.snapshots[k][: state.size] @ c * math.exp(max(lf, -700.0))
    return RadialSolution(space.E, space.J, [c.describe() for c in space.channels], res.K, S,
                          np.array(state.rhos), g, diag)
