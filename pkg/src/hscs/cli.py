"""Command-line interface: ``hscs {terms,couplings,scatter,net,verify}``.

Exit codes: 0 ok, 2 validation error, 3 convergence failure, 4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from io import StringIO
from pathlib import Path

from . import __version__, checks
from . import kinematics as kin
from .basis import three_pole_net
from .coupling import CouplingSet
from .errors import ConvergenceError, HSCSError, ValidationError
from .pipeline import (
    RunConfig,
    channel_labels,
    compute_couplings,
    compute_terms,
    default_config,
    load_config,
    refinement_report,
    run_scatter,
)

log = logging.getLogger("hscs")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_VERIFY = 0, 2, 3, 4


class Run:
    """Output directory, manifest stamp and per-stage diagnostics of one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, command: str):
        self.cfg = cfg
        self.out = out
        self.command = command
        self.stamp = cfg.manifest_hash
        self.stages: dict = {}
        self.files: list = []
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def write_json(self, name: str, doc: dict) -> Path:
        doc = dict(doc, manifest=self.stamp)
        path = self.out / name
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.files.append(name)
        return path

    def finish(self) -> None:
        manifest = {"manifest": self.stamp, "config_hash": self.cfg.config_hash, "tool_version": __version__,
                    "command": self.command, "wall_clock_seconds": round(time.perf_counter() - self.t0, 3),
                    "stages": self.stages, "files": self.files, "config": self.cfg.to_dict()}
        (self.out / f"manifest_{self.command}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# --- stages ------------------------------------------------------------------


def cmd_terms(run: Run, args) -> int:
    rows, labels, events = compute_terms(run.cfg)
    lines = [f"# manifest={run.stamp}\n"]
    header = ["m", "n_xi", "n_eta", "rho", "eps", "lam", "p", "alpha", "n", "s"]
    buf = StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        lab = labels[(r.m, r.n_xi, r.n_eta)]
        tail = [lab.alpha, lab.n, lab.s] if lab is not None else ["", "", ""]
        w.writerow([r.m, r.n_xi, r.n_eta, repr(r.rho), repr(r.eps), repr(r.lam), repr(r.p)] + tail)
    run.write_text("terms.csv", "".join(lines) + buf.getvalue())
    run.stages["terms"] = {"rows": len(rows), "crossings": events}
    return EXIT_OK


def _load_or_compute_couplings(run: Run, jobs: int) -> CouplingSet:
    key = run.cfg.coupling_key()
    path = run.out / "couplings.json"
    if path.exists():
        try:
            doc = json.loads(path.read_text())
            if doc.get("coupling_key") == key:
                log.info("reusing %s", path)
                return CouplingSet.from_json(path.read_text())
        except (json.JSONDecodeError, KeyError):
            pass
    cs = compute_couplings(run.cfg, jobs=jobs)
    path.write_text(cs.to_json(manifest=run.stamp, coupling_key=key) + "\n")
    run.files.append("couplings.json")
    return cs


def cmd_couplings(run: Run, args) -> int:
    cs = compute_couplings(run.cfg, jobs=args.jobs)
    run.write_text("couplings.json", cs.to_json(manifest=run.stamp, coupling_key=run.cfg.coupling_key()) + "\n")
    diag = {"q_residual": max(p.diagnostics.get("q_residual", 0.0) for p in cs.points)}
    if args.refine > 1:
        fine = compute_couplings(run.cfg, refine=args.refine)
        report = refinement_report(cs, fine)
        diag["refinement"] = {"factor": args.refine, "max_entry_change": report}
        run.write_json("couplings_refinement.json", {"factor": args.refine, "max_entry_change": report})
        print(json.dumps({"max_entry_change": report}, sort_keys=True))
    run.stages["couplings"] = diag
    return EXIT_OK


def cmd_scatter(run: Run, args) -> int:
    cs = _load_or_compute_couplings(run, args.jobs)
    results = run_scatter(cs, run.cfg, jobs=args.jobs)
    run.write_json("scatter.json", {"solutions": results})
    status = [r["status"] for r in results]
    run.stages["scatter"] = {"status": status}
    for r in results:
        if r["status"] in ("ok", "over_budget"):
            d = r["diagnostics"]
            print(f"E={r['E']:g} {r['status']} symmetry {d['symmetry_defect']:.2e} "
                  f"unitarity {d['unitarity_defect']:.2e}")
        else:
            print(f"E={r['E']:g} {r['status']}: {r['error']}")
    bad = any(s in ("convergence_failure", "over_budget") for s in status)
    return EXIT_CONVERGENCE if bad else EXIT_OK


def cmd_net(run: Run, args) -> int:
    n = run.cfg.net
    rho0 = args.rho0 if args.rho0 is not None else n.rho0
    doc = three_pole_net(run.cfg.system.build(), rho0, n.n_xi_lines, n.n_eta_lines, n.samples)
    run.write_json("net.json", doc)
    run.stages["net"] = {"curves": len(doc["curves"])}
    return EXIT_OK


def coupling_suite(cfg: RunConfig, cs: CouplingSet):
    """Coupling-set checks for ``cfg`` with their fixed inputs, plus the channel labels.

    The spot reference is recomputed from scratch, so a faulted ``cs`` is
    compared against clean couplings.
    """
    system = cs.system
    labels = channel_labels(system, cfg.basis.states, cfg.scatter.label_rho or float(cs.rhos[-1]), cfg.basis.labels)
    thresholds = [kin.threshold(system, lab.alpha, lab.n) for lab in labels]
    emax = max(cfg.scatter.energies) if cfg.scatter.energies else -1e-300
    open_ = [i for i, t in enumerate(thresholds) if t < emax]
    pairs = [(i, j) for i in open_ for j in open_ if i < j
             and (labels[i].alpha, labels[i].n) != (labels[j].alpha, labels[j].n)]
    return checks.CouplingChecks(checks.spot_reference(cs, cfg.verify.spots), pairs, thresholds), labels


def run_verify(cfg: RunConfig, cs: CouplingSet | None = None, jobs: int = 1) -> list:
    """The invariant suite on ``cfg``; returns the check results in report order."""
    system = cfg.system.build()
    v = cfg.verify
    results = [
        checks.check_legendre_limit(),
        checks.check_one_centre(cfg.system.masses, max(cfg.system.charges)),
        checks.check_hydrogenic(system, ((0, 0, 0),), top=v.hydrogenic_top),
        checks.check_gram(system, cfg.grid.rhos[:: v.gram_stride]),
        checks.check_u_asymptote(system, top=v.u_ladder_top),
    ]
    if cs is None:
        cs = compute_couplings(cfg, jobs=jobs)
    if v.fault:
        cs = checks.inject(cs, checks.Fault(**v.fault))
    suite, labels = coupling_suite(cfg, cs)
    results += suite.run(cs)
    if cfg.scatter.energies:
        results.append(checks.check_scattering(cs, labels, cfg.scatter.energies, cfg.scatter.rho_max, cfg.basis.J))
    return results


def cmd_verify(run: Run, args) -> int:
    cs = None if run.cfg.verify.fault else _load_or_compute_couplings(run, args.jobs)
    results = run_verify(run.cfg, cs, jobs=args.jobs)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    run.write_json("verify.json", {"passed": ok, "checks": [r.to_dict() for r in results]})
    run.stages["verify"] = {"passed": ok}
    print("verification", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"terms": cmd_terms, "couplings": cmd_couplings, "scatter": cmd_scatter, "net": cmd_net,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hscs", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, default=None, help="JSON run configuration (default: bundled)")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: from config)")
    p.add_argument("--refine", type=int, default=1, help="quadrature refinement factor for couplings")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--rho0", type=float, default=None, help="sphere radius for net (default: from config)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"hscs {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.refine < 1 or args.jobs < 1:
            raise ValidationError("--refine and --jobs must be at least 1")
        if args.rho0 is not None and args.rho0 <= 0.0:
            raise ValidationError("--rho0 must be positive")
        try:
            cfg = load_config(args.config) if args.config else default_config()
        except (TypeError, KeyError, ValueError, OSError) as exc:
            raise ValidationError(f"invalid config: {exc}") from exc
        out = args.out or Path(cfg.output.get("directory", "hscs-out"))
        run = Run(cfg, out, args.command)
        code = COMMANDS[args.command](run, args)
        run.finish()
        return code
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"convergence failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except HSCSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
