"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_core.pyx`` line for line and are used when the extension is not
built (or when ``ROBUST_ERM_PURE=1``).
"""
from __future__ import annotations

import math

import numpy as np

from .smooth_loss import PLATEAU_EDGE, SATURATION, HermiteTable


def _tail(z_abs, order):
    if order == 0:
        return SATURATION * z_abs - SATURATION * 0.75
    if order == 1:
        return np.full_like(z_abs, SATURATION)
    return np.zeros_like(z_abs)


def table_eval(table: HermiteTable, z: np.ndarray, order: int) -> np.ndarray:
    h = table.step
    last = table.size - 1
    a = np.abs(z)
    t = a / h
    i = np.minimum(t.astype(np.intp), last - 1)
    u = t - i
    y0 = table.values[order, i]
    y1 = table.values[order, i + 1]
    m0 = table.slopes[order, i]
    m1 = table.slopes[order, i + 1]
    u2 = u * u
    u3 = u2 * u
    val = ((2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * h * m0
           + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * h * m1)
    val = np.where(a >= PLATEAU_EDGE, _tail(a, order), val)
    if order % 2 == 1:
        val = np.where(z < 0, -val, val)
    return val


def solve_location(means, scale, d1, d2, tol, max_iter):
    """Root of ``z -> sum_j d1(scale * (means_j - z))`` by safeguarded Newton.

    ``d1``/``d2`` evaluate rho' and rho'' on arrays. The estimating function is
    nonincreasing, so the bracket [min, max] always holds a sign change.
    Returns ``(z, iterations, residual, lo, hi)``.
    """
    lo = float(np.min(means))
    hi = float(np.max(means))
    if hi <= lo:
        return lo, 0, 0.0, lo, hi
    b_lo, b_hi = lo, hi
    eps = max(tol, 4.0 * math.ulp(max(abs(lo), abs(hi))))
    z = float(np.median(means))
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        u = scale * (means - z)
        f = float(np.sum(d1(u)))
        if f > 0.0:
            lo = z
        elif f < 0.0:
            hi = z
        else:
            break
        g = scale * float(np.sum(d2(u)))
        if g > 0.0 and abs(f / g) <= eps:
            z += f / g
            break
        zn = z + f / g if g > 0.0 else 0.5 * (lo + hi)
        if not lo < zn < hi:
            zn = 0.5 * (lo + hi)
        step = abs(zn - z)
        z = zn
        if step <= eps or hi - lo <= eps:
            break
    u = scale * (means - z)
    if np.all(np.abs(u) >= PLATEAU_EDGE):
        # flat root set between two neighbouring means: take its midpoint
        below = means[means < z]
        above = means[means > z]
        if below.size == above.size and below.size > 0:
            z = 0.5 * (float(np.max(below)) + float(np.min(above)))
            u = scale * (means - z)
    residual = float(np.sum(d1(u)))
    return z, iterations, residual, b_lo, b_hi
