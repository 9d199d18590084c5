"""Backend selection for the hot kernels.

The compiled ``_core`` extension is used when importable; setting the
environment variable ``ROBUST_ERM_PURE=1`` forces the numpy fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_core = None
if os.environ.get("ROBUST_ERM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core  # type: ignore[attr-defined,no-redef]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _core = None


def table_eval(table, z: np.ndarray, order: int) -> np.ndarray:
    if _core is not None:
        return _core.table_eval(table, np.ascontiguousarray(z, dtype=np.float64), order)
    return _fallback.table_eval(table, z, order)


def solve_location(means: np.ndarray, scale: float, loss, tol: float, max_iter: int):
    means = np.ascontiguousarray(means, dtype=np.float64)
    if loss.table is not None and _core is not None:
        return _core.solve_location(loss.table, means, float(scale), float(tol), int(max_iter))
    return _fallback.solve_location(
        means, float(scale), lambda u: loss.deriv(u, 1), lambda u: loss.deriv(u, 2), tol, max_iter
    )
