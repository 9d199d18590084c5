"""Median-of-means type proxies of the risk built from block means.

The location estimate of block means ``Lbar_1..Lbar_k`` is the root of the
monotone estimating equation::

    sum_j rho'(sqrt(n) * (Lbar_j - z) / delta) = 0

which is the first-order condition of minimizing
``sum_j rho(sqrt(n) * (Lbar_j - z) / delta)`` over ``z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DataError
from .smooth_loss import SmoothLoss

ROOT_TOL = 1e-12
ROOT_MAX_ITER = 500
MAD_CONSISTENCY = 1.4826
DELTA_FLOOR = 0.1
U_STAT_MAX_N = 12


@dataclass(frozen=True)
class BlockScheme:
    """Disjoint blocks of equal size ``n`` over sample indices ``0..N-1``.

    ``blocks[j]`` lists the (0-based) indices in block ``j``; indices past
    ``k * n`` in the (optionally permuted) order are left out.
    """

    N: int
    blocks: np.ndarray  # (k, n) int
    delta_n: float = 1.0

    def __post_init__(self):
        if not self.delta_n > 0:
            raise ConfigurationError(f"delta_n must be positive, got {self.delta_n}")

    @property
    def k(self) -> int:
        return self.blocks.shape[0]

    @property
    def n(self) -> int:
        return self.blocks.shape[1]

    @property
    def scale(self) -> float:
        """Multiplier ``sqrt(n) / delta_n`` applied to block-mean deviations."""
        return math.sqrt(self.n) / self.delta_n

    @property
    def assignment(self) -> np.ndarray:
        """Block id of every sample index, -1 where unassigned."""
        out = np.full(self.N, -1, dtype=np.intp)
        for j, idx in enumerate(self.blocks):
            out[idx] = j
        return out

    def with_delta(self, delta_n: float) -> "BlockScheme":
        return replace(self, delta_n=float(delta_n))

    def split(self, data: np.ndarray) -> np.ndarray:
        """Data rearranged as ``(k, n, ...)``."""
        if len(data) < self.k * self.n or int(self.blocks.max()) >= len(data):
            raise DataError(f"block scheme over N={self.N} does not fit {len(data)} samples")
        return np.asarray(data)[self.blocks]


@dataclass(frozen=True)
class ProxyResult:
    value: float
    iterations: int
    residual: float
    bracket: tuple[float, float]


def make_blocks(N: int, k: int, shuffle_seed: Optional[int] = None, delta_n: float = 1.0) -> BlockScheme:
    if N < 2 or k < 1 or k > N / 2:
        raise ConfigurationError(f"need 1 <= k <= N/2 (got k={k}, N={N})")
    n = N // k
    order = np.arange(N)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(N)
    return BlockScheme(N=int(N), blocks=order[: k * n].reshape(k, n).copy(), delta_n=delta_n)


def mad_delta(block_means: np.ndarray, n: int) -> float:
    """Scale factor ``max(1.4826 * MAD(block means) * sqrt(n), 0.1)``."""
    means = np.asarray(block_means, dtype=float)
    mad = float(np.median(np.abs(means - np.median(means))))
    return max(MAD_CONSISTENCY * mad * math.sqrt(n), DELTA_FLOOR)


def contamination_block_count(N: int, kappa: float, tau: float = 1.0) -> int:
    """Number of blocks ``k ~ N * kappa^(2/(2+tau))``, at least ``2 * O + 1``."""
    if not 0 <= kappa < 1:
        raise ConfigurationError(f"kappa must lie in [0, 1), got {kappa}")
    outliers = int(round(kappa * N))
    k = max(math.ceil(N * kappa ** (2.0 / (2.0 + tau))) if kappa > 0 else 1, 2 * outliers + 1)
    if k > N / 2:
        raise ConfigurationError(f"kappa={kappa} needs k={k} blocks, more than N/2={N / 2}")
    return k


def solve_location(values: np.ndarray, scale: float, loss: SmoothLoss,
                   tol: float = ROOT_TOL) -> ProxyResult:
    """Root of ``sum_j rho'(scale * (values_j - z))`` over ``z``."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise DataError("need at least one block mean")
    if not np.all(np.isfinite(values)):
        raise DataError("block means must be finite")
    if not tol > 0:
        raise ConfigurationError(f"tol must be positive, got {tol}")
    z, iterations, residual, lo, hi = _kernels.solve_location(values, scale, loss, tol, ROOT_MAX_ITER)
    return ProxyResult(float(z), int(iterations), float(residual), (float(lo), float(hi)))


def robust_mean(block_means, scheme: BlockScheme, loss: SmoothLoss, tol: float = ROOT_TOL) -> ProxyResult:
    return solve_location(block_means, scheme.scale, loss, tol)


def block_loss_means(theta, blocked: np.ndarray, model) -> np.ndarray:
    return model.loss(theta, blocked).mean(axis=1)


def block_grad_means(theta, blocked: np.ndarray, model) -> np.ndarray:
    return model.grad_loss(theta, blocked).mean(axis=1)


def robust_risk(theta, data, model, scheme: BlockScheme, loss: SmoothLoss, tol: float = ROOT_TOL) -> ProxyResult:
    return robust_mean(block_loss_means(theta, scheme.split(data), model), scheme, loss, tol)


def robust_diff(theta, theta_prime, data, model, scheme: BlockScheme, loss: SmoothLoss,
                tol: float = ROOT_TOL) -> ProxyResult:
    blocked = scheme.split(data)
    diffs = block_loss_means(theta, blocked, model) - block_loss_means(theta_prime, blocked, model)
    return robust_mean(diffs, scheme, loss, tol)


def u_statistic_proxy(theta, data, n: int, model, loss: SmoothLoss, delta: float,
                      tol: float = ROOT_TOL) -> float:
    """Permutation-invariant proxy over every size-``n`` subset of the sample."""
    data = np.asarray(data)
    N = len(data)
    if N > U_STAT_MAX_N:
        raise ConfigurationError(
            f"exhaustive U-statistic proxy supports N <= {U_STAT_MAX_N} (got {N}); use robust_risk"
        )
    if not 1 <= n <= N:
        raise ConfigurationError(f"subset size must satisfy 1 <= n <= N, got n={n}")
    if not delta > 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    # sorting makes every subset mean independent of the input order, bit for bit
    losses = np.sort(np.asarray(model.loss(theta, data), dtype=float))
    subsets = np.array(list(combinations(range(N), n)), dtype=np.intp)
    means = losses[subsets].mean(axis=1)
    return solve_location(means, math.sqrt(n) / delta, loss, tol).value
