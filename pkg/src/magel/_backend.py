"""Kernel backend selection.

The compiled extension is preferred; set ``MAGEL_PURE_PYTHON=1`` to force
the numpy fallback (used by the benchmark and the backend-agreement tests).
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("MAGEL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        pass

locate_preimages = kernels.locate_preimages
winding_numbers = kernels.winding_numbers
polyline_distance = kernels.polyline_distance
laplacian_apply = kernels.laplacian_apply
bspline_deposit = kernels.bspline_deposit
bspline_deposit_adjoint = kernels.bspline_deposit_adjoint

__all__ = [
    "BACKEND",
    "kernels",
    "locate_preimages",
    "winding_numbers",
    "polyline_distance",
    "laplacian_apply",
    "bspline_deposit",
    "bspline_deposit_adjoint",
]
