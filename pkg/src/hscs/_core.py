"""Backend selection for the hot kernels.

The compiled extension is used when it imports; ``HSCS_PURE_PYTHON=1`` forces
the reference implementation.
"""
from __future__ import annotations

import os

if os.environ.get("HSCS_PURE_PYTHON"):
    from ._kernels_py import propagate, shoot_radial

    BACKEND = "python"
else:
    try:
        from ._kernels import propagate, shoot_radial

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        from ._kernels_py import propagate, shoot_radial

        BACKEND = "python"

__all__ = ["BACKEND", "propagate", "shoot_radial"]
