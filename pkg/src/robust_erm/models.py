"""Parametric loss families with known population quantities.

Samples are 2-D arrays with one observation per row; losses and gradients
broadcast over any leading axes, so ``(k, n, p)`` block arrays work directly.
"""
from __future__ import annotations

import math

import numpy as np

from .datagen import NoiseSpec
from .errors import ConfigurationError


class RiskModel:
    """Loss ``l(theta, x)`` with gradient, sampler and ground truth at ``theta0``.

    Population fields:
      hessian_at_theta0  second derivative of the risk at theta0
      sigma_matrix       E[grad l grad l^T] at theta0
      gamma              E[(l - L) grad l] at theta0
      var_ell            Var l(theta0, X)
      moment_order       tau with 2 + tau finite moments
    """

    name = "model"
    dim: int
    theta0: np.ndarray
    hessian_at_theta0: np.ndarray
    sigma_matrix: np.ndarray
    gamma: np.ndarray
    var_ell: float
    moment_order: float

    def loss(self, theta, x):
        raise NotImplementedError

    def grad_loss(self, theta, x):
        raise NotImplementedError

    def risk(self, theta) -> float:
        raise NotImplementedError

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def erm(self, data) -> np.ndarray:
        """Closed-form minimizer of the empirical risk."""
        raise NotImplementedError

    def columns(self) -> list[str]:
        raise NotImplementedError

    def adversarial_point(self, direction, magnitude):
        raise ConfigurationError(f"{self.name} has no adaptive adversary")

    def snapshot(self) -> dict:
        raise NotImplementedError

    def feasible(self, theta) -> bool:
        return bool(np.all(np.isfinite(theta)))


def _as_theta(theta) -> np.ndarray:
    return np.atleast_1d(np.asarray(theta, dtype=float))


class GaussianLocation(RiskModel):
    """``l(theta, x) = |x - theta|^2 / 2`` with ``X = mu + noise`` coordinatewise."""

    name = "gaussian-location"

    def __init__(self, d: int = 1, mu=None, sigma: float = 1.0, noise: NoiseSpec | None = None):
        if d < 1:
            raise ConfigurationError("dimension must be positive")
        if noise is None:
            if not sigma > 0:
                raise ConfigurationError(f"sigma must be positive, got {sigma}")
            noise = NoiseSpec.gaussian(sigma)
        self.noise = noise
        self.dim = int(d)
        self.theta0 = np.zeros(d) if mu is None else np.broadcast_to(np.asarray(mu, float), (d,)).copy()
        var = noise.variance
        m4 = noise.moment(4)
        self.hessian_at_theta0 = np.eye(d)
        self.sigma_matrix = var * np.eye(d)
        self.gamma = np.zeros(d)  # symmetric noise: E[(l - L) (theta0 - X)] = 0
        # Var(sum_i e_i^2 / 2) = d (m4 - var^2) / 4
        self.var_ell = d * (m4 - var * var) / 4.0
        self.moment_order = noise.moment_order

    def loss(self, theta, x):
        r = np.asarray(x) - _as_theta(theta)
        return 0.5 * np.einsum("...i,...i->...", r, r)

    def grad_loss(self, theta, x):
        return _as_theta(theta) - np.asarray(x)

    def risk(self, theta):
        r = _as_theta(theta) - self.theta0
        return 0.5 * (self.dim * self.noise.variance + float(r @ r))

    def sample(self, N, rng):
        return self.theta0 + self.noise.sample((N, self.dim), rng)

    def erm(self, data):
        return np.asarray(data, float).mean(axis=0)

    def columns(self):
        return [f"x_{i + 1}" for i in range(self.dim)]

    def adversarial_point(self, direction, magnitude):
        u = np.ones(self.dim) if direction is None else np.asarray(direction, float)
        return self.theta0 + magnitude * u / np.linalg.norm(u)

    def snapshot(self):
        return {"model": self.name, "d": self.dim, "mu": self.theta0.tolist(),
                "noise": {"family": self.noise.family, "param": self.noise.param, "scale": self.noise.scale}}


def gaussian_location(d: int = 1, mu=None, sigma: float = 1.0) -> GaussianLocation:
    return GaussianLocation(d, mu, sigma)


class LinearRegression(RiskModel):
    """``l(theta, (z, y)) = (y - <theta, z>)^2`` with ``Y = <theta*, Z> + eps``.

    ``Z ~ N(0, cov_z)`` is independent of the noise; rows are ``z_1..z_d, y``.
    """

    name = "linear-regression"

    def __init__(self, d: int = 1, theta_star=None, cov_z=None, noise: NoiseSpec | None = None):
        if d < 1:
            raise ConfigurationError("dimension must be positive")
        self.dim = int(d)
        self.theta0 = np.ones(d) if theta_star is None else np.broadcast_to(np.asarray(theta_star, float), (d,)).copy()
        cov = np.eye(d) if cov_z is None else np.asarray(cov_z, float)
        if cov.shape != (d, d) or not np.allclose(cov, cov.T):
            raise ConfigurationError("cov_z must be a symmetric d x d matrix")
        try:
            self._chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigurationError("cov_z must be positive definite") from None
        self.cov_z = cov
        self.noise = NoiseSpec.gaussian(1.0) if noise is None else noise
        s2 = self.noise.variance
        self.hessian_at_theta0 = 2.0 * cov
        self.sigma_matrix = 4.0 * s2 * cov
        # E[(eps^2 - s2) * (-2 eps Z)] = -2 E[eps^3] E[Z] = 0 for centered Z
        self.gamma = np.zeros(d)
        self.var_ell = self.noise.moment(4) - s2 * s2
        self.moment_order = self.noise.moment_order

    def _split(self, x):
        x = np.asarray(x)
        return x[..., : self.dim], x[..., self.dim]

    def loss(self, theta, x):
        z, y = self._split(x)
        r = y - z @ _as_theta(theta)
        return r * r

    def grad_loss(self, theta, x):
        z, y = self._split(x)
        r = y - z @ _as_theta(theta)
        return -2.0 * r[..., None] * z

    def risk(self, theta):
        r = _as_theta(theta) - self.theta0
        return self.noise.variance + float(r @ self.cov_z @ r)

    def sample(self, N, rng):
        z = rng.standard_normal((N, self.dim)) @ self._chol.T
        y = z @ self.theta0 + self.noise.sample(N, rng)
        return np.column_stack([z, y])

    def erm(self, data):
        z, y = self._split(data)
        return np.linalg.lstsq(z, y, rcond=None)[0]

    def columns(self):
        return [f"z_{i + 1}" for i in range(self.dim)] + ["y"]

    def adversarial_point(self, direction, magnitude):
        # leverage point pulling the fit along ``direction``
        u = np.ones(self.dim) if direction is None else np.asarray(direction, float)
        u = u / np.linalg.norm(u)
        z = 10.0 * u
        return np.concatenate([z, [z @ self.theta0 + magnitude]])

    def snapshot(self):
        return {"model": self.name, "d": self.dim, "theta_star": self.theta0.tolist(),
                "cov_z": self.cov_z.tolist(),
                "noise": {"family": self.noise.family, "param": self.noise.param, "scale": self.noise.scale}}


def linear_regression(d: int = 1, theta_star=None, cov_z=None, noise: NoiseSpec | None = None) -> LinearRegression:
    return LinearRegression(d, theta_star, cov_z, noise)


class ExponentialRate(RiskModel):
    """Negative log-likelihood ``theta x - log theta`` of ``X ~ Exp(rate lambda0)``.

    Here ``Gamma(theta0) = 1/lambda0`` is nonzero, so every term of the direct
    estimator's covariance is active.
    """

    name = "exponential-rate"

    def __init__(self, lambda0: float = 1.0):
        if not lambda0 > 0:
            raise ConfigurationError(f"lambda0 must be positive, got {lambda0}")
        lam = float(lambda0)
        self.lambda0 = lam
        self.dim = 1
        self.theta0 = np.array([lam])
        self.hessian_at_theta0 = np.array([[1.0 / lam**2]])
        self.sigma_matrix = np.array([[1.0 / lam**2]])  # Var X
        # l - L = lam (X - 1/lam), grad l = X - 1/lam
        self.gamma = np.array([1.0 / lam])
        self.var_ell = 1.0
        self.moment_order = 1.0

    def feasible(self, theta):
        t = _as_theta(theta)
        return bool(np.all(np.isfinite(t)) and t[0] > 0)

    def loss(self, theta, x):
        t = float(_as_theta(theta)[0])
        x = np.asarray(x)[..., 0]
        if t <= 0:
            return np.full(x.shape, np.inf)
        return t * x - math.log(t)

    def grad_loss(self, theta, x):
        t = float(_as_theta(theta)[0])
        return np.asarray(x)[..., :1] - 1.0 / t

    def risk(self, theta):
        t = float(_as_theta(theta)[0])
        return t / self.lambda0 - math.log(t) if t > 0 else math.inf

    def sample(self, N, rng):
        return rng.exponential(1.0 / self.lambda0, (N, 1))

    def erm(self, data):
        return np.array([1.0 / float(np.mean(np.asarray(data)[:, 0]))])

    def columns(self):
        return ["x"]

    def adversarial_point(self, direction, magnitude):
        return np.array([magnitude])

    def snapshot(self):
        return {"model": self.name, "lambda0": self.lambda0}


def exponential_rate(lambda0: float = 1.0) -> ExponentialRate:
    return ExponentialRate(lambda0)


MODELS = {
    "gaussian-location": GaussianLocation,
    "linear-regression": LinearRegression,
    "exponential-rate": ExponentialRate,
}
