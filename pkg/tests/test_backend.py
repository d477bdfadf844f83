import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hscs import _core
from hscs import _kernels_py as py

cy = pytest.importorskip("hscs._kernels")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "benchmarks"))
from bench_kernels import propagate_case  # noqa: E402


@pytest.mark.parametrize("args", [(6.0, 1.3, 1, 3.1, 40.0, 4000), (2.0, 0.7, 0, -0.4, 30.0, 3000),
                                  (12.0, 2.5, 2, 9.0, 15.0, 2000)])
def test_shoot_radial_backends_agree(args):
    a, b = py.shoot_radial(*args), cy.shoot_radial(*args)
    assert a[1] == b[1]
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("seed", [3, 8])
def test_propagate_backends_agree(seed):
    case = propagate_case(seed=seed)
    a, b = py.propagate(*case), cy.propagate(*case)
    # accept/reject decisions near err = 1 follow rounding order (MGS vs Householder
    # QR), so the step sequences drift apart; the propagated space must not
    assert abs(a[1] - b[1]) <= 0.05 * a[1]
    # same unnormalized continuation Y T exp(log_scale)
    sol_a = a[0] @ a[4]
    sol_b = b[0] @ b[4] * np.exp(b[5] - a[5])
    assert np.max(np.abs(sol_a - sol_b)) < 1e-7 * np.max(np.abs(sol_a))


def test_default_backend_is_compiled():
    if os.environ.get("HSCS_PURE_PYTHON"):
        pytest.skip("pure Python forced")
    assert _core.BACKEND == "cython"


def test_pure_python_fallback_end_to_end():
    code = ("import json; from hscs import _core, csf, kinematics as k;"
            "s = csf.solve_state(k.build_system(1, 2, 1, 1, 2), 6.0, 0, 1, 0);"
            "print(json.dumps([_core.BACKEND, s.eps]))")
    out = {}
    for flag in ("1", ""):
        env = dict(os.environ, HSCS_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[flag] = json.loads(res.stdout)
    assert out["1"][0] == "python" and out[""][0] == "cython"
    assert out["1"][1] == pytest.approx(out[""][1], rel=1e-12)
