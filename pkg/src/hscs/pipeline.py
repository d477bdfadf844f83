"""Run configuration and the terms -> couplings -> scattering stages."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import csf
from . import kinematics as kin
from . import radial
from .coupling import BasisSpec, CouplingSet, compute_coupling_set
from .csf import ChannelLabel
from .errors import AmbiguousLabel, ConvergenceError, HSCSError, NoOpenChannel, ValidationError

log = logging.getLogger("hscs")

DEFAULT_CONFIG = Path(__file__).with_name("default_config.json")


# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class SystemBlock:
    masses: tuple
    charges: tuple
    allow_zero_charge: bool = False

    def build(self) -> kin.ParticleSystem:
        m1, m2, m3 = self.masses
        z1, z2 = self.charges
        return kin.build_system(m1, m2, m3, z1, z2, allow_zero_charge=self.allow_zero_charge)


@dataclass(frozen=True)
class BasisBlock:
    states: tuple  # (m, n_xi, n_eta) in channel order
    J: int = 0
    K: int = 0
    parity: int | None = None
    labels: dict = field(default_factory=dict)  # "m,n_xi,n_eta" -> [alpha, n, s, m]


@dataclass(frozen=True)
class GridBlock:
    rho_min: float
    rho_max: float
    n_rho: int
    quadrature_points: int = 16
    quadrature_tol: float = 1e-10
    drho: float | None = None  # derivative step; None scales with rho

    @property
    def rhos(self) -> np.ndarray:
        return np.geomspace(self.rho_min, self.rho_max, self.n_rho)


@dataclass(frozen=True)
class ScatterBlock:
    energies: tuple
    rho_max: float | None = None
    rtol: float = 1e-10
    label_rho: float | None = None
    defect_budget: float = 1e-4


@dataclass(frozen=True)
class NetBlock:
    rho0: float = 10.0
    n_xi_lines: int = 8
    n_eta_lines: int = 9
    samples: int = 200


@dataclass(frozen=True)
class VerifyBlock:
    gram_stride: int = 1
    hydrogenic_top: float = 3200.0
    u_ladder_top: float = 1280.0
    spots: tuple = (1.0, 5.0)
    fault: dict | None = None  # {"family", "m", "row", "col", "scale"}


@dataclass(frozen=True)
class RunConfig:
    system: SystemBlock
    basis: BasisBlock
    grid: GridBlock
    scatter: ScatterBlock
    net: NetBlock = NetBlock()
    verify: VerifyBlock = VerifyBlock()
    output: dict = field(default_factory=lambda: {"directory": "hscs-out"})

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @property
    def manifest_hash(self) -> str:
        """Hash of config and tool version; stamped into every emitted file."""
        return hashlib.sha256((self.canonical() + __version__).encode()).hexdigest()[:16]

    def coupling_key(self) -> str:
        part = {"system": asdict(self.system), "states": [list(s) for s in self.basis.states],
                "J": self.basis.J, "grid": asdict(self.grid), "version": __version__}
        return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()[:16]


def _need(block: dict, key: str, where: str):
    if key not in block:
        raise ValidationError(f"missing '{key}' in {where} block")
    return block[key]


def _states_from(basis: dict) -> tuple:
    if "states" in basis:
        states = tuple(tuple(int(v) for v in s) for s in basis["states"])
        if any(len(s) != 3 or min(s) < 0 for s in states):
            raise ValidationError("basis states must be non-negative [m, n_xi, n_eta] triples")
    else:
        caps = [int(_need(basis, k, "basis")) for k in ("m_max", "n_xi_max", "n_eta_max")]
        if min(caps) < 0:
            raise ValidationError("basis caps must be non-negative")
        states = tuple((m, nx, ne) for m in range(caps[0] + 1) for nx in range(caps[1] + 1)
                       for ne in range(caps[2] + 1))
    if not states:
        raise ValidationError("empty basis")
    if len(set(states)) != len(states):
        raise ValidationError("duplicate basis states")
    return states


def load_config(source) -> RunConfig:
    """Validate a config mapping (or JSON path) before anything is computed."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {source}: {exc}") from exc
    else:
        raw = dict(source)
    s = _need(raw, "system", "top-level")
    masses = tuple(float(v) for v in _need(s, "masses", "system"))
    charges = tuple(float(v) for v in _need(s, "charges", "system"))
    if len(masses) != 3 or len(charges) != 2:
        raise ValidationError("system needs three masses and two charges")
    system = SystemBlock(masses, charges, bool(s.get("allow_zero_charge", False)))
    system.build()  # raises on invalid particle data

    b = _need(raw, "basis", "top-level")
    states = _states_from(b)
    J, K = int(b.get("J", 0)), int(b.get("K", 0))
    if J < 0 or abs(K) > J:
        raise ValidationError(f"need J >= 0 and |K| <= J, got J={J}, K={K}")
    if any(st[0] > J for st in states):
        raise ValidationError("basis m exceeds J")
    parity = b.get("parity")
    if parity is not None and parity not in (1, -1):
        raise ValidationError("parity must be +1, -1 or null")
    labels = {str(k): list(v) for k, v in b.get("labels", {}).items()}
    basis = BasisBlock(states, J, K, parity, labels)

    g = _need(raw, "grid", "top-level")
    grid = GridBlock(float(_need(g, "rho_min", "grid")), float(_need(g, "rho_max", "grid")),
                     int(_need(g, "n_rho", "grid")), int(g.get("quadrature_points", 16)),
                     float(g.get("quadrature_tol", 1e-10)),
                     None if g.get("drho") is None else float(g["drho"]))
    if not 0.0 < grid.rho_min < grid.rho_max or grid.n_rho < 2:
        raise ValidationError("grid needs 0 < rho_min < rho_max and n_rho >= 2")
    if grid.quadrature_points <= 0 or grid.quadrature_tol <= 0.0 or (grid.drho is not None and grid.drho <= 0.0):
        raise ValidationError("quadrature settings must be positive")

    sc = raw.get("scatter", {"energies": []})
    energies = tuple(float(e) for e in sc.get("energies", []))
    if any(e >= 0.0 for e in energies):
        raise ValidationError("every energy must lie below the breakup threshold 0")
    scatter = ScatterBlock(energies, None if sc.get("rho_max") is None else float(sc["rho_max"]),
                           float(sc.get("rtol", 1e-10)),
                           None if sc.get("label_rho") is None else float(sc["label_rho"]),
                           float(sc.get("defect_budget", 1e-4)))
    if scatter.rho_max is not None and not grid.rho_min < scatter.rho_max <= grid.rho_max:
        raise ValidationError("scatter rho_max must lie inside the grid")
    if scatter.rtol <= 0.0:
        raise ValidationError("rtol must be positive")

    n = raw.get("net", {})
    net = NetBlock(float(n.get("rho0", 10.0)), int(n.get("n_xi_lines", 8)), int(n.get("n_eta_lines", 9)),
                   int(n.get("samples", 200)))
    if net.rho0 <= 0.0 or min(net.n_xi_lines, net.n_eta_lines, net.samples) <= 0:
        raise ValidationError("net parameters must be positive")

    v = raw.get("verify", {})
    verify = VerifyBlock(int(v.get("gram_stride", 1)), float(v.get("hydrogenic_top", 3200.0)),
                         float(v.get("u_ladder_top", 1280.0)), tuple(float(x) for x in v.get("spots", (1.0, 5.0))),
                         v.get("fault"))
    if verify.gram_stride <= 0:
        raise ValidationError("gram_stride must be positive")
    output = dict(raw.get("output", {"directory": "hscs-out"}))
    return RunConfig(system, basis, grid, scatter, net, verify, output)


def default_config() -> RunConfig:
    return load_config(DEFAULT_CONFIG)


# --- stages ------------------------------------------------------------------


def label_key(state) -> str:
    return ",".join(str(int(v)) for v in state)


def channel_labels(system: kin.ParticleSystem, states, rho: float, overrides: dict | None = None) -> list:
    """Asymptotic label of each state, read off its localization at ``rho``."""
    overrides = overrides or {}
    out = []
    for q in states:
        key = label_key(q)
        if key in overrides:
            a, n, s, m = overrides[key]
            out.append(ChannelLabel(int(a), int(n), int(s), int(m)))
            continue
        st = csf.solve_state(system, rho, *q)
        out.append(csf.classify(system, [st]))
    return out


@dataclass
class TermRow:
    m: int
    n_xi: int
    n_eta: int
    rho: float
    eps: float
    lam: float
    p: float


def compute_terms(cfg: RunConfig):
    """Eigenvalue curves of every basis state on the grid, their labels and crossing events."""
    system = cfg.system.build()
    rhos = cfg.grid.rhos
    rows, curves = [], {}
    for q in cfg.basis.states:
        fam = csf.track(system, rhos, *q)
        curves[q] = np.array([s.eps for s in fam])
        rows += [TermRow(q[0], q[1], q[2], float(s.rho), float(s.eps), float(s.lam), float(s.p)) for s in fam]
    labels = {}
    for q in cfg.basis.states:
        try:
            labels[q] = channel_labels(system, [q], float(rhos[-1]), cfg.basis.labels)[0]
        except AmbiguousLabel as exc:
            log.info("state %s unlabeled: %s", q, exc)
            labels[q] = None
    events = []
    keys = list(curves)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            if a[0] != b[0]:
                continue
            diff = np.sign(curves[a] - curves[b])
            for k in np.nonzero(diff[1:] * diff[:-1] < 0)[0]:
                ev = {"states": [list(a), list(b)], "rho_lo": float(rhos[k]), "rho_hi": float(rhos[k + 1])}
                log.info("eigenvalue crossing %s", ev)
                events.append(ev)
    return rows, labels, events


def compute_couplings(cfg: RunConfig, jobs: int = 1, refine: int = 1) -> CouplingSet:
    """Coupling set on the config grid; ``refine`` multiplies quadrature points and divides the derivative step."""
    system = cfg.system.build()
    g = cfg.grid
    if refine > 1 or g.drho is not None:
        from .coupling import couplings_at

        step = None if g.drho is None else g.drho / refine
        pts = [couplings_at(system, BasisSpec(cfg.basis.states), float(r), cfg.basis.J, tol=g.quadrature_tol,
                            points=g.quadrature_points * refine,
                            step=step if step is not None else (csf.default_step(float(r)) / refine))
               for r in g.rhos]
        return CouplingSet(system, BasisSpec(cfg.basis.states), cfg.basis.J, g.rhos.copy(), pts)
    return compute_coupling_set(system, BasisSpec(cfg.basis.states), g.rhos, J=cfg.basis.J,
                                tol=g.quadrature_tol, points=g.quadrature_points, jobs=jobs)


def refinement_report(base: CouplingSet, fine: CouplingSet) -> dict:
    """Largest absolute change of each family between two coupling sets on the same grid."""
    out = {}
    for name in ("P", "Q", "R", "U", "W"):
        out[name] = float(np.max(np.abs(base.full(name) - fine.full(name))))
    if base.J > 0:
        out["T"] = float(np.max(np.abs(base.full_T() - fine.full_T())))
    return out


def scatter_one(cs: CouplingSet, cfg: RunConfig, labels, E: float) -> dict:
    """One energy; failures become records instead of exceptions."""
    try:
        space = radial.build_channel_space(cs.system, E, list(zip(cfg.basis.states, labels)), J=cfg.basis.J,
                                           K=cfg.basis.K, parity=cfg.basis.parity)
        sol = radial.solve(cs, space, rho_max=cfg.scatter.rho_max, rtol=cfg.scatter.rtol)
    except NoOpenChannel as exc:
        return {"E": E, "status": "no_open_channel", "error": str(exc)}
    except ConvergenceError as exc:
        return {"E": E, "status": "convergence_failure", "error": f"{type(exc).__name__}: {exc}"}
    doc = sol.to_dict()
    d = sol.diagnostics
    over = [k for k in ("symmetry_defect", "unitarity_defect") if d[k] > cfg.scatter.defect_budget]
    doc["status"] = "over_budget" if over else "ok"
    if over:
        doc["over_budget"] = over
    return doc


def _scatter_worker(args):
    cs, cfg, labels, E = args
    return scatter_one(cs, cfg, labels, E)


def run_scatter(cs: CouplingSet, cfg: RunConfig, jobs: int = 1) -> list:
    rho_label = cfg.scatter.label_rho or float(cs.rhos[-1])
    labels = channel_labels(cs.system, cfg.basis.states, rho_label, cfg.basis.labels)
    args = [(cs, cfg, labels, E) for E in cfg.scatter.energies]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_scatter_worker, args))
    return [_scatter_worker(a) for a in args]


__all__ = ["RunConfig", "load_config", "default_config", "compute_terms", "compute_couplings", "run_scatter",
           "scatter_one", "channel_labels", "refinement_report", "HSCSError"]
