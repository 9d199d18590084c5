"""Independent reference computations shared by the test modules."""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate


def raw_bump(x: float) -> float:
    return math.exp(-4.0 / (1.0 - 4.0 * x * x)) if abs(x) < 0.5 else 0.0


BUMP_MASS = integrate.quad(raw_bump, -0.5, 0.5, epsabs=1e-16, epsrel=1e-14)[0]


def huber_ref(y: float) -> float:
    a = abs(y)
    return 0.5 * y * y if a <= 1.5 else 1.5 * (a - 0.75)


def convolution_ref(z: float, order: int = 0) -> float:
    """Adaptive-quadrature value of (H * psi)(z) (order 0) or (H' * psi)(z) (order 1)."""
    if order == 0:
        f = lambda x: huber_ref(z - x) * raw_bump(x) / BUMP_MASS  # noqa: E731
    else:
        f = lambda x: min(1.5, max(-1.5, z - x)) * raw_bump(x) / BUMP_MASS  # noqa: E731
    kinks = [p for p in (z - 1.5, z + 1.5) if -0.5 < p < 0.5]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)  # tolerance is below roundoff near 0
        return integrate.quad(f, -0.5, 0.5, points=kinks or None, epsabs=1e-15, epsrel=1e-13, limit=200)[0]


def grid_argmin(objective, lo: float, hi: float, step: float = 1e-6, coarse: float = 1e-2,
                rel_tol: float = 1e-10) -> float:
    """Grid-search minimizer of a convex 1-d objective.

    The minimizer is the midpoint of the grid points whose value is within
    ``rel_tol`` of the grid minimum, so a flat minimizing interval yields its
    centre. A coarse pass locates the sublevel set, then both of its ends are
    refined on the ``step`` grid.
    """
    zs = np.arange(lo - coarse, hi + 2 * coarse, coarse)
    f = objective(zs)
    tol = rel_tol * max(1.0, float(np.min(np.abs(f))))

    i = int(np.argmin(f))
    fine = np.arange(zs[max(i - 1, 0)], zs[min(i + 1, len(zs) - 1)] + step, step)
    fmin = float(np.min(objective(fine)))
    near = zs[f <= fmin + tol]
    left = near.min() if near.size else zs[i]
    right = near.max() if near.size else zs[i]
    ends = []
    for centre in (left, right):
        win = np.arange(centre - coarse, centre + coarse + step, step)
        vals = objective(win)
        fmin = min(fmin, float(vals.min()))
        ends.append(win)
    pts = np.concatenate(ends)
    ok = pts[objective(pts) <= fmin + tol]
    return 0.5 * (float(ok.min()) + float(ok.max()))
