# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: cubic-Hermite table lookup of rho^(k) and the block-mean
location solver. Must agree with ``_fallback`` to rounding."""

from libc.math cimport fabs, nextafter, INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double SATURATION = 1.5
cdef double PLATEAU_EDGE = 2.0


cdef inline double _lookup(const double[:, ::1] values, const double[:, ::1] slopes,
                           double h, Py_ssize_t last, int order, double z) nogil:
    cdef double a = fabs(z)
    cdef double t, u, u2, u3, val
    cdef Py_ssize_t i
    if a >= PLATEAU_EDGE:
        if order == 0:
            val = SATURATION * a - SATURATION * 0.75
        elif order == 1:
            val = SATURATION
        else:
            val = 0.0
    else:
        t = a / h
        i = <Py_ssize_t>t
        if i > last - 1:
            i = last - 1
        u = t - i
        u2 = u * u
        u3 = u2 * u
        val = ((2 * u3 - 3 * u2 + 1) * values[order, i] + (u3 - 2 * u2 + u) * h * slopes[order, i]
               + (-2 * u3 + 3 * u2) * values[order, i + 1] + (u3 - u2) * h * slopes[order, i + 1])
    if order % 2 == 1 and z < 0:
        return -val
    return val


def table_eval(table, const double[::1] z, int order):
    cdef const double[:, ::1] values = table.values
    cdef const double[:, ::1] slopes = table.slopes
    cdef double h = table.step
    cdef Py_ssize_t last = values.shape[1] - 1
    cdef Py_ssize_t m = z.shape[0], j
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for j in range(m):
            res[j] = _lookup(values, slopes, h, last, order, z[j])
    return out


cdef inline double _ulp(double x) nogil:
    return nextafter(x, INFINITY) - x


def solve_location(table, const double[::1] means, double scale, double tol, int max_iter):
    """Same contract as ``_fallback.solve_location`` with the table standing in for rho', rho''."""
    cdef const double[:, ::1] values = table.values
    cdef const double[:, ::1] slopes = table.slopes
    cdef double h = table.step
    cdef Py_ssize_t last = values.shape[1] - 1
    cdef Py_ssize_t k = means.shape[0], j
    cdef double lo = means[0], hi = means[0]
    cdef double z, zn, f, g, u, eps, step, below, above, b_lo, b_hi
    cdef int iterations = 0, n_below, n_above, saturated
    for j in range(1, k):
        if means[j] < lo:
            lo = means[j]
        if means[j] > hi:
            hi = means[j]
    if hi <= lo:
        return lo, 0, 0.0, lo, hi
    b_lo = lo
    b_hi = hi
    eps = 4.0 * _ulp(fabs(lo) if fabs(lo) > fabs(hi) else fabs(hi))
    if tol > eps:
        eps = tol
    z = float(np.median(np.asarray(means)))
    with nogil:
        while iterations < max_iter:
            iterations += 1
            f = 0.0
            g = 0.0
            for j in range(k):
                u = scale * (means[j] - z)
                f += _lookup(values, slopes, h, last, 1, u)
                g += _lookup(values, slopes, h, last, 2, u)
            g *= scale
            if f > 0.0:
                lo = z
            elif f < 0.0:
                hi = z
            else:
                break
            if g > 0.0 and fabs(f / g) <= eps:
                z += f / g
                break
            if g > 0.0:
                zn = z + f / g
            else:
                zn = 0.5 * (lo + hi)
            if not (lo < zn < hi):
                zn = 0.5 * (lo + hi)
            step = fabs(zn - z)
            z = zn
            if step <= eps or hi - lo <= eps:
                break
        saturated = 1
        n_below = 0
        n_above = 0
        below = -INFINITY
        above = INFINITY
        for j in range(k):
            u = scale * (means[j] - z)
            if fabs(u) < PLATEAU_EDGE:
                saturated = 0
            if means[j] < z:
                n_below += 1
                if means[j] > below:
                    below = means[j]
            elif means[j] > z:
                n_above += 1
                if means[j] < above:
                    above = means[j]
        if saturated and n_below == n_above and n_below > 0:
            z = 0.5 * (below + above)
        f = 0.0
        for j in range(k):
            f += _lookup(values, slopes, h, last, 1, scale * (means[j] - z))
    return z, iterations, f, b_lo, b_hi
