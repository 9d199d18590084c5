"""Seeded samplers: noise families and adversarial contamination."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class NoiseSpec:
    """Centered noise law.

    ``param`` is the standard deviation for ``gaussian``, the degrees of
    freedom for ``student_t`` and the tail index for ``pareto_symmetric``;
    ``scale`` multiplies the heavy-tailed draws.
    """

    family: Literal["gaussian", "student_t", "pareto_symmetric"] = "gaussian"
    param: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family == "gaussian":
            if self.param < 0:
                raise ConfigurationError("gaussian sigma must be nonnegative")
        elif self.family in ("student_t", "pareto_symmetric"):
            if not self.param > 2:
                raise ConfigurationError(f"{self.family} needs parameter > 2 for a finite variance")
        else:
            raise ConfigurationError(f"unknown noise family {self.family!r}")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "NoiseSpec":
        return cls("gaussian", float(sigma))

    @classmethod
    def student_t(cls, dof: float, scale: float = 1.0) -> "NoiseSpec":
        return cls("student_t", float(dof), float(scale))

    @classmethod
    def pareto_symmetric(cls, alpha: float, scale: float = 1.0) -> "NoiseSpec":
        return cls("pareto_symmetric", float(alpha), float(scale))

    @property
    def moment_order(self) -> float:
        """tau such that 2 + tau moments exist (capped at 1)."""
        if self.family == "gaussian":
            return 1.0
        return min(1.0, self.param - 2.0)

    def moment(self, p: int) -> float:
        """Raw moment ``E eps^p`` for p in 2..4 (inf when it does not exist)."""
        if p % 2 == 1:
            return 0.0 if self.family == "gaussian" or self.param > p else math.nan
        if self.family == "gaussian":
            return self.param ** p * (1.0 if p == 2 else 3.0)
        nu = self.param
        if nu <= p:
            return math.inf
        s = self.scale ** p
        if self.family == "student_t":
            return s * (nu / (nu - 2) if p == 2 else 3 * nu * nu / ((nu - 2) * (nu - 4)))
        return s * nu / (nu - p)  # |Pareto(nu, x_m=1)|^p with a random sign

    @property
    def variance(self) -> float:
        return self.moment(2)

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        if self.family == "gaussian":
            return self.param * rng.standard_normal(size)
        if self.family == "student_t":
            return self.scale * rng.standard_t(self.param, size)
        magnitude = rng.pareto(self.param, size) + 1.0
        sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return self.scale * sign * magnitude


Strategy = Literal["fixed_point", "amplify", "adaptive"]


@dataclass(frozen=True)
class ContaminationSpec:
    """Replace ``count_outliers`` of ``N`` samples.

    ``fixed_point`` writes ``location`` into every coordinate of the chosen rows,
    ``amplify`` multiplies them by ``scale`` and ``adaptive`` moves them to
    ``theta0 + 1e6 * direction``.
    """

    count_outliers: int
    N: int
    strategy: Strategy = "fixed_point"
    location: float = 1e6
    scale: float = 1e3
    direction: Optional[tuple] = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("N must be positive")
        if not 0 <= self.count_outliers < self.N:
            raise ConfigurationError(f"need 0 <= O < N (got O={self.count_outliers}, N={self.N})")
        if self.strategy not in ("fixed_point", "amplify", "adaptive"):
            raise ConfigurationError(f"unknown contamination strategy {self.strategy!r}")

    @classmethod
    def from_kappa(cls, kappa: float, N: int, **kwargs) -> "ContaminationSpec":
        return cls(int(round(kappa * N)), N, **kwargs)

    @property
    def kappa(self) -> float:
        return self.count_outliers / self.N


ADAPTIVE_MAGNITUDE = 1e6


def sample_clean(model, N: int, seed) -> np.ndarray:
    if N < 1:
        raise ConfigurationError("N must be positive")
    return model.sample(N, np.random.default_rng(seed))


def contaminate(data: np.ndarray, spec: ContaminationSpec, seed, model=None) -> np.ndarray:
    """Copy of ``data`` with ``spec.count_outliers`` rows replaced.

    Rows are picked uniformly without replacement; the remaining rows keep their
    values and order. ``adaptive`` needs ``model`` (for ``theta0`` and the layout).
    """
    data = np.asarray(data)
    if spec.count_outliers == 0:
        return data
    if len(data) != spec.N:
        raise ConfigurationError(f"spec is for N={spec.N} but data has {len(data)} rows")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(data), size=spec.count_outliers, replace=False)
    out = np.array(data, dtype=float, copy=True)
    if spec.strategy == "fixed_point":
        out[idx] = spec.location
    elif spec.strategy == "amplify":
        out[idx] = out[idx] * spec.scale
    else:
        if model is None:
            raise ConfigurationError("adaptive contamination needs the model")
        out[idx] = model.adversarial_point(spec.direction, ADAPTIVE_MAGNITUDE)
    return out
