"""Kernel backend selection.

The compiled core is preferred when importable; the numpy lane is the
fallback. BOXTEX_KERNELS=numpy|cython|auto overrides (cython raises if the
extension is missing). Both lanes expose the same functions and agree
numerically; tests assert parity.
"""

from __future__ import annotations

import os

from .bvh import BvhArrays, build_bvh

_choice = os.environ.get("BOXTEX_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(f"BOXTEX_KERNELS must be auto|cython|numpy, got {_choice!r}")

if _choice in ("auto", "cython"):
    try:
        from . import _core as _impl
        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        from . import _numpy as _impl
        BACKEND = "numpy"
else:
    from . import _numpy as _impl
    BACKEND = "numpy"

closest_point_brute = _impl.closest_point_brute
closest_point_bvh = _impl.closest_point_bvh
first_opaque_hit = _impl.first_opaque_hit

__all__ = [
    "BACKEND",
    "BvhArrays",
    "build_bvh",
    "closest_point_brute",
    "closest_point_bvh",
    "first_opaque_hit",
]
