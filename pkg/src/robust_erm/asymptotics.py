"""Limiting covariances of the min-max and direct robust estimators.

``D2 = H^-1 Sigma H^-1`` for the min-max pair. For the direct estimator,
``V2 = H^-1 A2 H^-1`` where, with ``u = Z1 / delta`` and ``(Z2, Z1)`` centered
Gaussian with ``Cov(Z2) = Sigma22``, ``Cov(Z2, Z1) = Gamma``, ``Var Z1 = v``,

    A2 = (E rho''(u))^-2 * ( E[rho''(u)^2 Z2 Z2^T]
         + (E rho4(u))^2 E rho'(u)^2 / (delta^2 (E rho''(u))^2) * Gamma Gamma^T
         - 2/delta * E rho4(u) E[rho''(u) rho'(u) Z1] / (v E rho''(u)) * Gamma Gamma^T )

This is the covariance of the linearized influence

    W = (rho''(u) Z2 - Gamma E rho4(u) / (delta E rho''(u)) * rho'(u)) / E rho''(u)

and the cross term carries a minus sign (see ``influence_sample``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigurationError, SpecError
from .smooth_loss import SmoothLoss

Kind = Literal["D2", "A2", "V2"]
Method = Literal["quadrature", "monte_carlo", "closed_form"]

PSD_TOL = 1e-10
DEFAULT_NODES = 128


def _symmetric(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class AsymptoticCovariance:
    matrix: np.ndarray
    kind: Kind
    delta_inf: float
    method: Method = "quadrature"

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise SpecError(f"covariance must be square, got shape {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > PSD_TOL * scale:
            raise SpecError(f"{self.kind} is not symmetric")
        m = _symmetric(m)
        if np.linalg.eigvalsh(m)[0] < -PSD_TOL * scale:
            raise SpecError(f"{self.kind} is not positive semidefinite")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "delta_inf": _json_float(self.delta_inf), "method": self.method,
                "matrix": self.matrix.tolist()}


def _json_float(x: float):
    return "inf" if math.isinf(x) else float(x)


@dataclass(frozen=True)
class JointGaussianSpec:
    """Covariance of ``(Z2, Z1)``: gradient part and loss part."""

    sigma22: np.ndarray
    gamma: np.ndarray
    var_z1: float

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma22, dtype=float))
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if s.shape != (g.size, g.size):
            raise SpecError(f"sigma22 {s.shape} does not match gamma of length {g.size}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(g)) and math.isfinite(self.var_z1)):
            raise SpecError("joint covariance entries must be finite")
        if self.var_z1 < 0:
            raise SpecError("var_z1 must be nonnegative")
        object.__setattr__(self, "sigma22", _symmetric(s))
        object.__setattr__(self, "gamma", g)
        full = self.matrix
        if np.linalg.eigvalsh(full)[0] < -PSD_TOL * max(1.0, float(np.max(np.abs(full)))):
            raise SpecError("joint covariance of (Z2, Z1) is not positive semidefinite")

    @classmethod
    def from_model(cls, model) -> "JointGaussianSpec":
        return cls(np.asarray(model.sigma_matrix, float), np.asarray(model.gamma, float), float(model.var_ell))

    @property
    def dim(self) -> int:
        return self.gamma.size

    @property
    def matrix(self) -> np.ndarray:
        d = self.dim
        full = np.empty((d + 1, d + 1))
        full[:d, :d] = self.sigma22
        full[:d, d] = full[d, :d] = self.gamma
        full[d, d] = self.var_z1
        return full

    def conditional_cov(self) -> np.ndarray:
        """``Cov(Z2 | Z1) = Sigma22 - Gamma Gamma^T / var_z1``."""
        if self.var_z1 == 0:
            if np.any(self.gamma != 0):
                raise SpecError("nonzero gamma with var_z1 = 0")
            return self.sigma22.copy()
        c = self.sigma22 - np.outer(self.gamma, self.gamma) / self.var_z1
        if np.linalg.eigvalsh(c)[0] < -PSD_TOL * max(1.0, float(np.max(np.abs(self.sigma22)))):
            raise SpecError("conditional covariance Sigma22 - Gamma Gamma^T / var_z1 is not PSD")
        return _symmetric(c)


def _hessian_inverse(model) -> np.ndarray:
    h = np.atleast_2d(np.asarray(model.hessian_at_theta0, dtype=float))
    try:
        np.linalg.cholesky(_symmetric(h))
        return np.linalg.inv(h)
    except np.linalg.LinAlgError:
        raise ConfigurationError("Hessian at theta0 must be symmetric positive definite") from None


def d_squared(model) -> AsymptoticCovariance:
    """Sandwich ``H^-1 Sigma H^-1`` (min-max estimators)."""
    hinv = _hessian_inverse(model)
    return AsymptoticCovariance(hinv @ np.atleast_2d(model.sigma_matrix) @ hinv, "D2", math.inf, "closed_form")


LOSS_BREAKS = (-2.0, -1.0, 1.0, 2.0)  # rho'' leaves its plateaus here
TAIL_SDS = 20.0


def gaussian_rule(sd: float, nodes: int = DEFAULT_NODES, breaks=LOSS_BREAKS) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E g(Z)``, ``Z ~ N(0, sd^2)``.

    Composite Gauss-Legendre with ``nodes`` points per panel on
    ``[-20 sd, 20 sd]``, split at ``breaks`` (points where ``g`` may be
    non-analytic); the Gaussian density is folded into the weights.
    """
    if not (isinstance(nodes, (int, np.integer)) and nodes >= 2):
        raise ConfigurationError(f"need an integer number of quadrature nodes >= 2, got {nodes!r}")
    if not sd > 0:
        raise ConfigurationError(f"sd must be positive, got {sd}")
    edge = TAIL_SDS * sd
    cuts = np.unique(np.concatenate([[-edge, edge], [b for b in breaks if -edge < b < edge]]))
    x, w = np.polynomial.legendre.leggauss(int(nodes))
    lo, hi = cuts[:-1, None], cuts[1:, None]
    pts = (0.5 * (hi + lo) + 0.5 * (hi - lo) * x).ravel()
    wts = (0.5 * (hi - lo) * w).ravel()
    return pts, wts * np.exp(-0.5 * (pts / sd) ** 2) / (sd * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class A2Moments:
    """One-dimensional expectations entering ``A2`` (all at ``u = Z1/delta``)."""

    e_rho2: float  # E rho''
    e_rho2_sq: float  # E rho''^2
    e_rho2_sq_z1sq: float  # E rho''^2 Z1^2
    e_rho4: float  # E rho4
    e_rho1_sq: float  # E rho'^2
    e_rho2_rho1_z1: float  # E rho'' rho' Z1

    @property
    def inflation(self) -> float:
        """``E rho''^2 / (E rho'')^2``, the Gamma = 0 variance factor."""
        return self.e_rho2_sq / self.e_rho2 ** 2


def a2_moments(var_z1: float, loss: SmoothLoss, delta_inf: float, quad_nodes: int = DEFAULT_NODES) -> A2Moments:
    z1, w = gaussian_rule(math.sqrt(var_z1), quad_nodes, [delta_inf * b for b in LOSS_BREAKS])
    u = z1 / delta_inf
    r1 = np.asarray(loss.deriv(u, 1))
    r2 = np.asarray(loss.deriv(u, 2))
    r4 = np.asarray(loss.deriv(u, 4))
    return A2Moments(float(w @ r2), float(w @ r2 ** 2), float(w @ (r2 ** 2 * z1 ** 2)),
                     float(w @ r4), float(w @ r1 ** 2), float(w @ (r2 * r1 * z1)))


def assemble_a_squared(sigma22, gamma, var_z1, mom: A2Moments, delta_inf: float) -> np.ndarray:
    """Combine the moments into ``A2``; ``sigma22`` is the unconditional block."""
    a = mom.e_rho2
    gg = np.outer(gamma, gamma)
    if var_z1 > 0:
        cond = sigma22 - gg / var_z1
        first = mom.e_rho2_sq * cond + mom.e_rho2_sq_z1sq * gg / var_z1 ** 2
        third = -(2.0 / delta_inf) * mom.e_rho4 * mom.e_rho2_rho1_z1 / (var_z1 * a) * gg
    else:
        first = mom.e_rho2_sq * sigma22
        third = np.zeros_like(gg)
    second = mom.e_rho4 ** 2 * mom.e_rho1_sq / (delta_inf ** 2 * a ** 2) * gg
    return _symmetric(first + second + third) / a ** 2


def _check_delta(delta_inf: float) -> float:
    delta_inf = float(delta_inf)
    if math.isnan(delta_inf) or not delta_inf > 0:
        raise ConfigurationError(f"delta_inf must be positive (or inf), got {delta_inf}")
    return delta_inf


def a_squared(spec: JointGaussianSpec, loss: SmoothLoss, delta_inf: float = math.inf,
              quad_nodes: int = DEFAULT_NODES) -> AsymptoticCovariance:
    """``A2`` by one-dimensional quadrature over Z1 after conditioning Z2 on Z1."""
    delta_inf = _check_delta(delta_inf)
    if not spec.var_z1 > 0:
        raise SpecError("var_z1 must be positive")
    spec.conditional_cov()  # PSD check
    if math.isinf(delta_inf):
        return AsymptoticCovariance(spec.sigma22.copy(), "A2", delta_inf, "closed_form")
    mom = a2_moments(spec.var_z1, loss, delta_inf, quad_nodes)
    if not mom.e_rho2 > 0:
        raise SpecError("E rho''(Z1/delta) vanishes; A2 is undefined")
    return AsymptoticCovariance(assemble_a_squared(spec.sigma22, spec.gamma, spec.var_z1, mom, delta_inf),
                                "A2", delta_inf, "quadrature")


def v_squared(model, loss: SmoothLoss, delta_inf: float = math.inf,
              quad_nodes: int = DEFAULT_NODES) -> AsymptoticCovariance:
    """``H^-1 A2 H^-1`` (direct estimator)."""
    hinv = _hessian_inverse(model)
    a2 = a_squared(JointGaussianSpec.from_model(model), loss, delta_inf, quad_nodes)
    return AsymptoticCovariance(hinv @ a2.matrix @ hinv, "V2", a2.delta_inf, a2.method)


def inflation_factor(var_z1: float, loss: SmoothLoss, delta_inf: float, quad_nodes: int = DEFAULT_NODES) -> float:
    """``E rho''(Z1/delta)^2 / (E rho''(Z1/delta))^2``; 1 when ``delta_inf`` is infinite."""
    delta_inf = _check_delta(delta_inf)
    if math.isinf(delta_inf):
        return 1.0
    return a2_moments(var_z1, loss, delta_inf, quad_nodes).inflation


# -- Monte Carlo cross-checks ------------------------------------------------

def sample_joint(spec: JointGaussianSpec, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draws of ``(Z2, Z1)``; returns ``(z2 of shape (size, d), z1 of shape (size,))``."""
    full = spec.matrix
    vals, vecs = np.linalg.eigh(full)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    z = rng.standard_normal((size, full.shape[0])) @ root.T
    return z[:, :-1], z[:, -1]


def _assemble_from_means(means: np.ndarray, d: int, gamma, var_z1, delta_inf) -> np.ndarray:
    a, c4, p1, m = means[:4]
    b_mat = means[4:].reshape(d, d)  # E rho''^2 Z2 Z2^T
    gg = np.outer(gamma, gamma)
    total = (b_mat + c4 ** 2 * p1 / (delta_inf ** 2 * a ** 2) * gg
             - (2.0 / delta_inf) * c4 * m / (var_z1 * a) * gg)
    return total / a ** 2


def a_squared_monte_carlo(spec: JointGaussianSpec, loss: SmoothLoss, delta_inf: float,
                          draws: int = 10 ** 7, seed=0, chunk: int = 10 ** 6):
    """Plain Monte Carlo of the ``A2`` display with per-entry standard errors.

    Every expectation in the display is averaged over the same joint draws of
    ``(Z2, Z1)`` (no conditioning, no Stein reduction); standard errors come
    from the delta method on the vector of integrand means.
    Returns ``(AsymptoticCovariance, stderr matrix)``.
    """
    delta_inf = _check_delta(delta_inf)
    if math.isinf(delta_inf) or draws < 2:
        raise ConfigurationError("Monte Carlo oracle needs finite delta_inf and at least two draws")
    rng = np.random.default_rng(seed)
    d = spec.dim
    width = 4 + d * d
    total = np.zeros(width)
    cross = np.zeros((width, width))
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        z2, z1 = sample_joint(spec, m, rng)
        u = z1 / delta_inf
        r1, r2, r4 = loss.deriv(u, 1), loss.deriv(u, 2), loss.deriv(u, 4)
        cols = np.empty((m, width))
        cols[:, 0] = r2
        cols[:, 1] = r4
        cols[:, 2] = r1 * r1
        cols[:, 3] = r2 * r1 * z1
        cols[:, 4:] = ((r2 * r2)[:, None, None] * z2[:, :, None] * z2[:, None, :]).reshape(m, d * d)
        total += cols.sum(axis=0)
        cross += cols.T @ cols
        done += m
    mean = total / draws
    cov = (cross / draws - np.outer(mean, mean)) * draws / (draws - 1)
    est = _assemble_from_means(mean, d, spec.gamma, spec.var_z1, delta_inf)
    # delta method with a numerical Jacobian of the assembly map
    jac = np.empty((d * d, width))
    for i in range(width):
        h = 1e-6 * max(1.0, abs(mean[i]))
        up, dn = mean.copy(), mean.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (_assemble_from_means(up, d, spec.gamma, spec.var_z1, delta_inf)
                     - _assemble_from_means(dn, d, spec.gamma, spec.var_z1, delta_inf)).ravel() / (2 * h)
    var = np.einsum("ij,jk,ik->i", jac, cov, jac) / draws
    stderr = np.sqrt(np.clip(var, 0.0, None)).reshape(d, d)
    return AsymptoticCovariance(_symmetric(est), "A2", delta_inf, "monte_carlo"), stderr


def influence_sample(spec: JointGaussianSpec, loss: SmoothLoss, delta_inf: float, draws: int, seed=0,
                     e_rho2: float | None = None, e_rho4: float | None = None) -> np.ndarray:
    """Draws of the linearized influence ``W`` whose covariance is ``A2``.

    Linearizing the implicit gradient of the proxy at theta0 gives
    ``rho''(Z1/delta) Z2 + rho'''(Z1/delta) Z1' Z2 / delta`` averaged over
    blocks, where the root's fluctuation contributes ``-rho'(Z1/delta) delta /
    E rho''`` through ``Z1'``; Stein's identity turns ``E rho''' Z2`` into
    ``Gamma E rho4 / delta``, which is where the minus sign of the cross term
    comes from. Constants default to sample estimates from the same draws.
    """
    rng = np.random.default_rng(seed)
    z2, z1 = sample_joint(spec, draws, rng)
    u = z1 / delta_inf
    r1, r2 = loss.deriv(u, 1), loss.deriv(u, 2)
    a = float(np.mean(r2)) if e_rho2 is None else e_rho2
    c4 = float(np.mean(loss.deriv(u, 4))) if e_rho4 is None else e_rho4
    return (r2[:, None] * z2 - np.outer(r1, spec.gamma) * c4 / (delta_inf * a)) / a


def stein_check(f, fprime, gamma: float, var1: float = 1.0, var2: float = 1.0,
                nodes: int = DEFAULT_NODES, breaks=LOSS_BREAKS) -> tuple[float, float, float]:
    """Both sides of ``E f(Z1) Z2 = gamma E f'(Z1)`` for a centered Gaussian pair.

    The left side is a two-dimensional product rule (composite Gauss-Legendre
    in Z1 split at ``breaks``, Gauss-Hermite in the independent part of Z2); the
    right side is the one-dimensional rule in Z1. Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    cov = np.array([[var1, gamma], [gamma, var2]], dtype=float)
    if not (np.all(np.isfinite(cov)) and var1 > 0 and var2 >= 0):
        raise SpecError("variances must be finite with var1 > 0")
    if np.linalg.eigvalsh(cov)[0] < -PSD_TOL * max(1.0, abs(var1), abs(var2)):
        raise SpecError(f"covariance [[{var1}, {gamma}], [{gamma}, {var2}]] is not PSD")
    z1, w1 = gaussian_rule(math.sqrt(var1), nodes, breaks)
    y, wy = np.polynomial.hermite_e.hermegauss(int(nodes))
    wy = wy / math.sqrt(2.0 * math.pi)
    cond_sd = math.sqrt(max(var2 - gamma * gamma / var1, 0.0))
    z2 = (gamma / var1) * z1[:, None] + cond_sd * y[None, :]
    fz = np.asarray(f(z1), dtype=float)
    lhs = float(np.einsum("i,j,i,ij->", w1, wy, fz, z2))
    rhs = gamma * float(w1 @ np.asarray(fprime(z1), dtype=float))
    return lhs, rhs, abs(lhs - rhs)
