"""Invariant suite behind ``hscs verify``.

Each check returns a :class:`CheckResult` with the measured quantity and the
tolerance it was held to. The coupling-set checks take the set as an argument
so a perturbed copy can be re-examined without recomputing anything.
"""
from __future__ import annotations

import inspect
import math
import time
from dataclasses import dataclass

import numpy as np

from . import csf
from . import kinematics as kin
from . import radial
from .coupling import FAMILIES, BasisSpec, CouplingPoint, CouplingSet, build_grid, couplings_at, gram
from .errors import HSCSError, NoOpenChannel


@dataclass
class CheckResult:
    name: str
    anchor: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "anchor": self.anchor, "passed": bool(self.passed),
                "measured": float(self.measured), "tolerance": float(self.tolerance), "detail": self.detail,
                "seconds": round(self.seconds, 3)}

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name:<24} measured {self.measured:.3e} tol {self.tolerance:.1e}  [{self.anchor}]"


def _default_tol(fn) -> float:
    p = inspect.signature(fn).parameters.get("tol")
    return p.default if p is not None and p.default is not inspect.Parameter.empty else math.nan


def _timed(fn):
    def wrapper(*args, **kwargs):
        t = time.perf_counter()
        try:
            res = fn(*args, **kwargs)
        except HSCSError as exc:
            name = fn.__name__.removeprefix("check_")
            tol = kwargs.get("tol", _default_tol(fn))
            res = CheckResult(name, ANCHORS.get(name, ""), False, math.inf, tol, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


ANCHORS = {
    "legendre_limit": "angular equation, zero-charge spherical limit",
    "one_centre": "two-centre problem with one charge removed",
    "hydrogenic": "separated equations at large rho: atomic limit",
    "gram": "basis normalization and orthogonality",
    "u_asymptote": "principal large-rho term of U",
    "structure": "coupling families: symmetry and structural zeros",
    "decoupling": "asymptotic decoupling of open channels",
    "tail": "inverse-square tail of the effective potential",
    "reproducibility": "stored couplings against spot recomputation",
    "scattering": "K symmetry and S-tilde unitarity",
}


# --- state-level checks ------------------------------------------------------


@_timed
def check_legendre_limit(lmax: int = 10, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    for m in range(lmax + 1):
        for n_eta in range(lmax - m + 1):
            l = m + n_eta
            worst = max(worst, abs(csf.angular_eigenvalue(0.0, 0.0, m, n_eta).lam - l * (l + 1)))
    return CheckResult("legendre_limit", ANCHORS["legendre_limit"], worst < tol, worst, tol,
                       f"all l <= {lmax}")


@_timed
def check_one_centre(masses=(1.0, 2.0, 1.0), Z1: float = 1.0, rhos=(2.0, 10.0, 40.0), nmax: int = 4,
                     tol: float = 1e-8) -> CheckResult:
    system = kin.build_system(*masses, Z1, 0.0, allow_zero_charge=True)
    worst = 0.0
    for rho in rhos:
        z1, _ = kin.effective_charges(system, rho)
        for N in range(1, nmax + 1):
            for m in range(N):
                for n_xi in range(N - m):
                    n_eta = N - 1 - m - n_xi
                    exact = -z1 * z1 / (4.0 * N * N)
                    eps = csf.solve_state(system, rho, m, n_xi, n_eta, eps_guess=exact).eps
                    worst = max(worst, abs(eps / exact - 1.0))
    return CheckResult("one_centre", ANCHORS["one_centre"], worst < tol, worst, tol, f"N <= {nmax}, rho in {rhos}")


def doubling_ladder(start: float, top: float) -> list:
    out = [float(start)]
    while out[-1] * 2.0 <= top * (1.0 + 1e-12):
        out.append(out[-1] * 2.0)
    return out


@_timed
def check_hydrogenic(system: kin.ParticleSystem, families=((0, 0, 0),), start: float = 25.0, top: float = 800.0,
                     tol: float = 1e-3) -> CheckResult:
    """``|eps/rho^2 - E_scaled|`` shrinks along a doubling ladder for each tracked family.

    A family is ``(m, n_xi, n_eta)`` or ``((m, n_xi, n_eta), top)`` with its own ladder end.
    """
    worst, notes, ok = 0.0, [], True
    for entry in families:
        q, end = (entry[0], entry[1]) if isinstance(entry[0], (tuple, list)) else (entry, top)
        fam = csf.track(system, doubling_ladder(start, end), *q)
        lab = csf.classify(system, fam)
        ref = kin.scaled_threshold(system, lab.alpha, lab.n)
        dev = np.array([abs(s.eps / s.rho**2 - ref) / abs(ref) for s in fam])
        ok &= bool(np.all(np.diff(dev) < 0.0))
        worst = max(worst, float(dev[-1]))
        notes.append(f"{q}->({lab.alpha},{lab.n}) final {dev[-1]:.2e}")
    return CheckResult("hydrogenic", ANCHORS["hydrogenic"], ok and worst < tol, worst, tol, "; ".join(notes))


LOWEST_SIX = ((0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 0, 2), (0, 1, 1), (0, 2, 0))


@_timed
def check_gram(system: kin.ParticleSystem, rhos, states=LOWEST_SIX, tol: float = 1e-8) -> CheckResult:
    worst, where = 0.0, None
    for rho in rhos:
        sts = [csf.solve_state(system, float(rho), *q) for q in states]
        G = gram(sts, build_grid(system, sts, tol=0.1 * tol))
        dev = float(np.max(np.abs(G - np.eye(len(sts)))))
        if dev > worst:
            worst, where = dev, float(rho)
    return CheckResult("gram", ANCHORS["gram"], worst < tol, worst, tol, f"{len(rhos)} radii, worst at {where}")


@_timed
def check_u_asymptote(system: kin.ParticleSystem, states=((0, 0, 0), (0, 0, 1)), start: float = 20.0,
                      top: float = 1280.0, tol: float = 1e-2) -> CheckResult:
    """``|U_ii - E_an|`` decreases monotonically along a doubling ladder; final relative deviation below ``tol``."""
    ladder = doubling_ladder(start, top)
    spec = BasisSpec(tuple(states))
    labels = [csf.classify(system, [csf.solve_state(system, ladder[-1], *q)]) for q in states]
    refs = np.array([kin.threshold(system, lab.alpha, lab.n) for lab in labels])
    devs = []
    for rho in ladder:
        p = couplings_at(system, spec, rho, 0)
        U = np.concatenate([np.diag(p.blocks[m]["U"]) for m in spec.ms])
        devs.append(np.abs(U - refs) / np.abs(refs))
    devs = np.array(devs)
    mono = bool(np.all(np.diff(devs, axis=0) < 0.0))
    final = float(devs[-1].max())
    return CheckResult("u_asymptote", ANCHORS["u_asymptote"], mono and final < tol, final, tol,
                       f"ladder {ladder[0]:g}..{ladder[-1]:g}, monotone={mono}")


# --- coupling-set checks --------------------------------------------------------


@_timed
def check_structure(cs: CouplingSet, tol: float = 1e-12) -> CheckResult:
    """``Q`` antisymmetric with zero diagonal; ``P``, ``U``, ``W`` symmetric; ``R = 0`` and no ``T`` at ``J = 0``."""
    worst, where = 0.0, ""
    for name, sign in (("Q", -1.0), ("P", 1.0), ("U", 1.0), ("W", 1.0), ("R", 1.0)):
        F = cs.full(name)
        scale = np.max(np.abs(F), axis=(1, 2))[:, None, None] + 1e-300
        dev = float(np.max(np.abs(F - sign * np.transpose(F, (0, 2, 1))) / scale))
        if dev > worst:
            worst, where = dev, name
    qd = float(np.max(np.abs(np.diagonal(cs.full("Q"), axis1=1, axis2=2))))
    if qd > worst:
        worst, where = qd, "Q diagonal"
    if cs.J == 0:
        r = float(np.max(np.abs(cs.full("R"))))
        if r > worst:
            worst, where = r, "R at J=0"
        if any(p.T for p in cs.points):
            worst, where = math.inf, "T present at J=0"
    return CheckResult("structure", ANCHORS["structure"], worst <= tol, worst, tol, f"worst in {where or '-'}")


def _pos(cs: CouplingSet, rho: float) -> int:
    return int(np.argmin(np.abs(np.log(cs.rhos / rho))))


@_timed
def check_decoupling(cs: CouplingSet, pairs, starts=(10.0, 20.0), factor: float = 10.0,
                     floor: float = 1e-11) -> CheckResult:
    """Off-diagonal ``Q``, ``U``, ``W`` between states of different asymptotic channels fall ``factor``-fold from ``rho`` to ``4 rho``.

    Values already below ``floor`` times the diagonal scale count as decoupled.
    """
    worst = math.inf
    fams = {name: cs.full(name) for name in ("Q", "U", "W")}
    notes = []
    for r0 in starts:
        if 4.0 * r0 > cs.rhos[-1]:
            continue
        a, b = _pos(cs, r0), _pos(cs, 4.0 * r0)
        for name, F in fams.items():
            scale = max(float(np.max(np.abs(np.diagonal(fams["U"][b], axis1=0, axis2=1)))), 1e-300)
            for i, j in pairs:
                lo, hi = abs(F[b, i, j]), abs(F[a, i, j])
                if lo <= floor * scale:
                    continue
                ratio = hi / lo
                worst = min(worst, ratio)
                notes.append(f"{name}{i}{j}@{r0:g}:{ratio:.1e}")
    if not notes:
        return CheckResult("decoupling", ANCHORS["decoupling"], True, math.inf, factor, "all below floor")
    return CheckResult("decoupling", ANCHORS["decoupling"], worst >= factor, worst, factor, ", ".join(notes[:6]))


@_timed
def check_tail(cs: CouplingSet, thresholds, growth: float = 1.1) -> CheckResult:
    """``rho^2 |V_ii - E_i|`` with ``V = P + U + W`` does not grow over the last doubling of the grid."""
    V = cs.full("P") + cs.full("U") + cs.full("W")
    b = len(cs.rhos) - 1
    a = _pos(cs, 0.5 * cs.rhos[-1])
    worst = 0.0
    for i, E in enumerate(thresholds):
        sa = cs.rhos[a] ** 2 * abs(V[a, i, i] - E)
        sb = cs.rhos[b] ** 2 * abs(V[b, i, i] - E)
        worst = max(worst, sb / max(sa, 1e-300))
    return CheckResult("tail", ANCHORS["tail"], worst <= growth, worst, growth,
                       f"rho {cs.rhos[a]:.3g} -> {cs.rhos[b]:.3g}")


def spot_reference(cs: CouplingSet, spots, refine: int = 2) -> dict:
    """Fresh couplings at the grid points nearest ``spots`` with ``refine`` times the quadrature points."""
    out = {}
    for s in spots:
        k = _pos(cs, s)
        rho = float(cs.rhos[k])
        out[k] = couplings_at(cs.system, cs.spec, rho, cs.J, points=16 * refine)
    return out


@_timed
def check_reproducibility(cs: CouplingSet, reference: dict, tol: float = 1e-6) -> CheckResult:
    """Entry-wise agreement of the set with independent spot recomputations."""
    worst, where = 0.0, ""
    for k, ref in reference.items():
        got = cs.points[k]
        for m in cs.spec.ms:
            for name in FAMILIES:
                A, B = got.blocks[m][name], ref.blocks[m][name]
                floor = 1e-6 * float(np.max(np.abs(B))) + 1e-300
                dev = float(np.max(np.abs(A - B) / (np.abs(B) + floor)))
                if dev > worst:
                    worst, where = dev, f"{name} m={m} rho={cs.rhos[k]:.3g}"
        for key, B in ref.T.items():
            A = got.T[key]
            floor = 1e-6 * float(np.max(np.abs(B))) + 1e-300
            dev = float(np.max(np.abs(A - B) / (np.abs(B) + floor)))
            if dev > worst:
                worst, where = dev, f"T{key} rho={cs.rhos[k]:.3g}"
    return CheckResult("reproducibility", ANCHORS["reproducibility"], worst < tol, worst, tol,
                       f"worst in {where or '-'}")


@_timed
def check_scattering(cs: CouplingSet, labels, energies, rho_max: float | None = None, J: int = 0,
                     tol: float = 1e-4) -> CheckResult:
    """Defects of converged runs plus the exact ``K = 0`` and round-trip identities."""
    worst, notes = 0.0, []
    for n in (1, 2, 3):
        Z = np.zeros((n, n))
        worst = max(worst, float(np.max(np.abs(radial.k_to_stilde(Z, J) - (-1.0) ** J * np.eye(n)))))
    for E in energies:
        try:
            space = radial.build_channel_space(cs.system, E, list(zip(cs.spec.states, labels)), J=J)
        except NoOpenChannel:
            notes.append(f"E={E:g}: no open channel")
            continue
        sol = radial.solve(cs, space, rho_max=rho_max)
        d = sol.diagnostics
        back = radial.stilde_to_k(sol.S_tilde, J)
        worst = max(worst, d["symmetry_defect"], d["unitarity_defect"], float(np.max(np.abs(back - sol.K))))
        notes.append(f"E={E:g}: sym {d['symmetry_defect']:.1e} uni {d['unitarity_defect']:.1e}")
    return CheckResult("scattering", ANCHORS["scattering"], worst < tol, worst, tol, "; ".join(notes))


# --- fault injection -----------------------------------------------------------


@dataclass(frozen=True)
class Fault:
    family: str
    m: int
    row: int
    col: int
    scale: float = 1.01


def inject(cs: CouplingSet, fault: Fault) -> CouplingSet:
    """Copy of ``cs`` with one matrix entry scaled at every grid point."""
    pts = []
    for p in cs.points:
        blocks = {m: {f: M.copy() for f, M in fam.items()} for m, fam in p.blocks.items()}
        T = {k: M.copy() for k, M in p.T.items()}
        if fault.family == "T":
            T[(fault.m, fault.m - 1)][fault.row, fault.col] *= fault.scale
        else:
            blocks[fault.m][fault.family][fault.row, fault.col] *= fault.scale
        pts.append(CouplingPoint(p.rho, dict(p.eps), blocks, T, dict(p.diagnostics)))
    return CouplingSet(cs.system, cs.spec, cs.J, cs.rhos.copy(), pts)


def all_faults(cs: CouplingSet, scale: float = 1.01) -> list:
    """Every entry that is not a structural zero, as a fault."""
    out = []
    for m in cs.spec.ms:
        n = len(cs.spec.indices(m))
        for name in FAMILIES:
            if name == "R" and cs.J == 0:
                continue
            for i in range(n):
                for j in range(n):
                    if name == "Q" and i == j:
                        continue
                    out.append(Fault(name, m, i, j, scale))
    return out


@dataclass
class CouplingChecks:
    """Coupling-set checks with their fixed inputs, so a faulted set can be rerun cheaply."""

    reference: dict
    pairs: list
    thresholds: list

    def run(self, cs: CouplingSet) -> list:
        return [check_structure(cs), check_decoupling(cs, self.pairs), check_tail(cs, self.thresholds),
                check_reproducibility(cs, self.reference)]


def detects(checks: CouplingChecks, cs: CouplingSet, fault: Fault) -> bool:
    return not all(r.passed for r in checks.run(inject(cs, fault)))
