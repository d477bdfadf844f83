"""Compiled vs pure-Python kernels on the two hot loops.

    python benchmarks/bench_kernels.py [--repeat N]

Runs each kernel on identical inputs through both backends, reports the best
wall time of ``--repeat`` runs and the largest output difference.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from hscs import _kernels_py as py

try:
    from hscs import _kernels as cy
except ImportError:  # pragma: no cover
    cy = None


def radial_case():
    return (6.0, 1.3, 1, 3.1, 40.0, 4000)


def propagate_case(n: int = 3, nseg: int = 60, seed: int = 3):
    """A smooth coupled operator: diagonal thresholds plus decaying couplings."""
    rng = np.random.default_rng(seed)
    knots = np.geomspace(0.5, 60.0, nseg + 1)
    mid = 0.5 * (knots[1:] + knots[:-1])
    base = rng.normal(size=(n, n))
    base = 0.5 * (base + base.T)
    a = np.zeros((nseg, 4, n, n))
    a[:, 3] = np.diag([0.1, 0.35, 0.6])[None] + base[None] * np.exp(-mid / 8.0)[:, None, None]
    b = np.zeros((nseg, 4, n, n))
    anti = rng.normal(size=(n, n))
    b[:, 3] = (anti - anti.T)[None] * (0.3 / mid)[:, None, None]
    Y = np.vstack([np.eye(n) * 1e-3, np.eye(n)])
    return knots, a, b, -0.05, 0.75, 0.5, 60.0, Y


def best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not built; only the Python backend is available")
        return 1
    rows = []
    rc = radial_case()
    tp, op = best(lambda: py.shoot_radial(*rc), args.repeat)
    tc, oc = best(lambda: cy.shoot_radial(*rc), args.repeat)
    rows.append(("shoot_radial", tp, tc, abs(op[0] - oc[0]), f"{op[1]}/{oc[1]}"))
    pc = propagate_case()
    tp, op = best(lambda: py.propagate(*pc), args.repeat)
    tc, oc = best(lambda: cy.propagate(*pc), args.repeat)
    # compare the unnormalized propagated solutions Y T exp(log_scale)
    sol_p = op[0] @ op[4]
    sol_c = oc[0] @ oc[4] * np.exp(oc[5] - op[5])
    rows.append(("propagate", tp, tc, float(np.max(np.abs(sol_p - sol_c)) / np.max(np.abs(sol_p))),
                 f"{op[1]}/{oc[1]}"))
    print(f"{'kernel':<14}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max rel diff':>14}  nodes or steps py/cy")
    for name, a, b, diff, counts in rows:
        print(f"{name:<14}{a:>12.4f}{b:>12.5f}{a / b:>10.1f}{diff:>14.2e}  {counts}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
