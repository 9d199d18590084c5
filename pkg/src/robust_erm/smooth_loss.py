"""Smoothed Huber loss: Huber's function convolved with a compact bump.

``rho = H * psi`` where ``H`` is Huber's loss with threshold 3/2 and ``psi`` is
the normalized bump ``C exp(-4 / (1 - 4 x^2))`` on ``|x| < 1/2``. Derivatives are
evaluated as ``H' * psi^(k-1)``: ``H'`` is only Lipschitz, so the remaining
derivatives are moved onto the bump, whose derivatives are closed-form
rational-exponential expressions. The integrals are taken with fixed-order
Gauss-Legendre rules split at the kinks of ``H'``.

The resulting function satisfies::

    rho'(z) = z        for |z| <= 1
    rho'(z) = 3/2      for z >= 2
    0 <= rho''(z) <= 1
    z - rho'(z) nondecreasing
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial

from .errors import ConfigurationError, DomainError

HUBER_THRESHOLD = 1.5
SATURATION = 1.5  # rho'(z) for z >= 2
PLATEAU_EDGE = 2.0  # rho'' vanishes beyond this
MAX_ORDER = 5
TABLE_MAX_ORDER = 4

_Q = Polynomial([1.0, 0.0, -4.0])  # 1 - 4x^2
_X = Polynomial([0.0, 1.0])


def _bump_polynomials(max_order: int) -> list[Polynomial]:
    # psi^(m)(x) = P_m(x) / Q(x)^(2m) * exp(-4 / Q(x)), up to the normalizer
    polys = [Polynomial([1.0])]
    dq = _Q.deriv()
    for m in range(max_order):
        p = polys[-1]
        polys.append(p.deriv() * _Q**2 - 2 * m * p * dq * _Q - 32.0 * _X * p)
    return polys


_BUMP_POLYS = _bump_polynomials(MAX_ORDER + 2)


def huber(y):
    """Huber's loss with threshold 3/2."""
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    return np.where(a <= HUBER_THRESHOLD, 0.5 * y * y, HUBER_THRESHOLD * (a - 0.75))


def huber_deriv(y):
    return np.clip(np.asarray(y, dtype=float), -HUBER_THRESHOLD, HUBER_THRESHOLD)


def unnormalized_bump_deriv(x, order: int = 0):
    """``d^order/dx^order exp(-4 / (1 - 4x^2))`` on ``|x| < 1/2``, zero outside."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 0.5
    xi = x[inside]
    q = 1.0 - 4.0 * xi * xi
    with np.errstate(over="ignore", under="ignore"):
        out[inside] = _BUMP_POLYS[order](xi) / q ** (2 * order) * np.exp(-4.0 / q)
    return out


@dataclass(frozen=True)
class HermiteTable:
    """Values and slopes of ``rho^(k)``, k = 0..4, on a uniform grid over [0, 2].

    Odd/even symmetry supplies negative arguments and closed forms cover |z| > 2.
    """

    step: float
    values: np.ndarray  # (TABLE_MAX_ORDER + 1, G + 1): rho^(k)(i * step)
    slopes: np.ndarray  # same shape: rho^(k+1)(i * step)

    @property
    def size(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SmoothLoss:
    """Immutable smoothed Huber loss with exact and tabulated evaluation paths."""

    quadrature_nodes: np.ndarray
    quadrature_weights: np.ndarray
    bump_normalizer: float
    table: Optional[HermiteTable] = field(default=None, compare=False)

    @property
    def quadrature_order(self) -> int:
        return len(self.quadrature_nodes)

    def bump(self, x, order: int = 0):
        """Normalized bump ``psi`` or its derivative."""
        return self.bump_normalizer * unnormalized_bump_deriv(x, order)

    def _convolve(self, z: np.ndarray, order: int) -> np.ndarray:
        # Panels [-1/2, z-3/2], [z-3/2, z+3/2], [z+3/2, 1/2], clipped to the support;
        # empty panels have zero width and drop out.
        b1 = np.clip(z - HUBER_THRESHOLD, -0.5, 0.5)
        b2 = np.clip(z + HUBER_THRESHOLD, -0.5, 0.5)
        lo = np.stack([np.full_like(z, -0.5), b1, b2], axis=-1)
        hi = np.stack([b1, b2, np.full_like(z, 0.5)], axis=-1)
        half = 0.5 * (hi - lo)
        x = (0.5 * (hi + lo))[..., None] + half[..., None] * self.quadrature_nodes
        y = z[:, None, None] - x
        if order == 0:
            integrand = huber(y) * self.bump(x, 0)
        else:
            integrand = huber_deriv(y) * self.bump(x, order - 1)
        return np.einsum("mpq,q,mp->m", integrand, self.quadrature_weights, half)

    def _check(self, z, order: int) -> np.ndarray:
        if order not in range(0, MAX_ORDER + 1):
            raise DomainError(f"derivative order must be in 0..{MAX_ORDER}, got {order}")
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise DomainError("rho is only defined for finite arguments")
        return z

    def exact(self, z, order: int = 0):
        """Quadrature evaluation of ``rho^(order)``, no table."""
        z = self._check(z, order)
        flat = np.atleast_1d(z).ravel()
        out = self._convolve(flat, order).reshape(z.shape)
        return float(out) if out.ndim == 0 else out

    def deriv(self, z, order: int = 1):
        """``rho^(order)(z)``; uses the table when one is attached and covers the order."""
        if self.table is None or order > TABLE_MAX_ORDER:
            return self.exact(z, order)
        z = self._check(z, order)
        from ._kernels import table_eval

        flat = np.ascontiguousarray(np.atleast_1d(z).ravel())
        out = table_eval(self.table, flat, order).reshape(z.shape)
        return float(out) if out.ndim == 0 else out

    def __call__(self, z):
        return self.deriv(z, 0)

    def with_table(self, grid_step: float = 5e-4) -> "SmoothLoss":
        """Copy of this loss with a cubic-Hermite lookup table attached."""
        if not grid_step > 0 or grid_step > 0.5:
            raise ConfigurationError(f"grid_step must lie in (0, 0.5], got {grid_step}")
        cells = int(np.ceil(PLATEAU_EDGE / grid_step))
        step = PLATEAU_EDGE / cells
        grid = step * np.arange(cells + 1)
        derivs = np.stack([self.exact(grid, k) for k in range(TABLE_MAX_ORDER + 2)])
        table = HermiteTable(step=step, values=derivs[:-1].copy(), slopes=derivs[1:].copy())
        return SmoothLoss(self.quadrature_nodes, self.quadrature_weights, self.bump_normalizer, table)

    def without_table(self) -> "SmoothLoss":
        return SmoothLoss(self.quadrature_nodes, self.quadrature_weights, self.bump_normalizer)


def build_smoothed_huber(grid_step: float = 5e-4, quadrature_order: int = 128,
                         tabulate: bool = False) -> SmoothLoss:
    """Build the smoothed Huber loss.

    ``grid_step`` is the lookup-table spacing, used only when ``tabulate`` is set.
    """
    if not (isinstance(quadrature_order, (int, np.integer)) and quadrature_order >= 16):
        raise ConfigurationError(f"quadrature_order must be an integer >= 16, got {quadrature_order!r}")
    if not (np.isfinite(grid_step) and grid_step > 0):
        raise ConfigurationError(f"grid_step must be positive, got {grid_step!r}")
    nodes, weights = np.polynomial.legendre.leggauss(int(quadrature_order))
    # normalizer: a composite rule on the bump alone is far more accurate than needed
    fine_nodes, fine_weights = np.polynomial.legendre.leggauss(max(2 * quadrature_order, 256))
    mass = 0.5 * np.sum(fine_weights * unnormalized_bump_deriv(0.5 * fine_nodes))
    loss = SmoothLoss(nodes, weights, 1.0 / mass)
    return loss.with_table(grid_step) if tabulate else loss


def rho(loss: SmoothLoss, z):
    """``rho(z)``; scalar or array."""
    return loss.deriv(z, 0)


def rho_deriv(loss: SmoothLoss, z, order: int = 1):
    """``rho^(order)(z)`` for ``order`` in 1..5."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise DomainError(f"derivative order must be in 1..{MAX_ORDER}, got {order!r}")
    return loss.deriv(z, int(order))


@dataclass(frozen=True)
class InvariantCheck:
    name: str
    max_violation: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(self.max_violation <= self.tolerance)


def check_invariants(loss: SmoothLoss, points: int = 10_000, span: float = 10.0,
                     fd_step: float = 1e-5, fd_tol: float = 1e-5) -> list[InvariantCheck]:
    """Evaluate the loss contract on a uniform grid over ``[-span, span]``.

    Finite differences compare ``(rho^(k)(z+h) - rho^(k)(z-h)) / 2h`` with
    ``rho^(k+1)(z)`` for k = 0..4.
    """
    z = np.linspace(-span, span, points)
    d1 = np.asarray(loss.deriv(z, 1))
    d2 = np.asarray(loss.deriv(z, 2))
    inner = np.abs(z) <= 1.0
    outer = z >= PLATEAU_EDGE
    checks = [
        InvariantCheck("rho'(z) = z on |z| <= 1",
                       float(np.max(np.abs(d1[inner] - z[inner]), initial=0.0)), 1e-10),
        InvariantCheck("rho'(z) = 3/2 on z >= 2",
                       float(np.max(np.abs(d1[outer] - SATURATION), initial=0.0)), 1e-10),
        InvariantCheck("|rho'| <= 3/2", float(max(np.max(np.abs(d1)) - SATURATION, 0.0)), 1e-12),
        InvariantCheck("rho'' in [0, 1]", float(max(-np.min(d2), np.max(d2) - 1.0, 0.0)), 1e-12),
        InvariantCheck("z - rho'(z) nondecreasing", float(max(-np.min(np.diff(z - d1)), 0.0)), 1e-12),
        InvariantCheck("rho even", float(np.max(np.abs(np.asarray(loss.deriv(z, 0)) - loss.deriv(-z, 0)))),
                       1e-12),
    ]
    for k in range(MAX_ORDER):
        fd = (np.asarray(loss.deriv(z + fd_step, k)) - loss.deriv(z - fd_step, k)) / (2.0 * fd_step)
        checks.append(InvariantCheck(f"finite difference of rho^({k}) matches rho^({k + 1})",
                                     float(np.max(np.abs(fd - loss.deriv(z, k + 1)))), fd_tol))
    return checks
