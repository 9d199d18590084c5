"""Robust risk minimizers.

The gradient of the proxy comes from implicit differentiation of the estimating
equation: with ``w_j = rho''(sqrt(n) (Lbar_j(theta) - Lhat(theta)) / delta)``,

    grad Lhat(theta) = sum_j w_j grad Lbar_j(theta) / sum_j w_j

so it is a convex combination of block gradients, exact at the computed root.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigurationError, DegenerateWeightsError, NumericalError
from .proxy import BlockScheme, block_grad_means, block_loss_means, solve_location
from .smooth_loss import SmoothLoss

Status = Literal["converged", "max_iter", "degenerate_weights"]

ARMIJO = 0.3  # sufficient-decrease constant; 1.4/curvature caps accepted steps
MIN_STEP = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    grad_tol: float = 1e-8
    max_iter: int = 500
    gda_inner_steps: int = 5
    restarts: int = 0
    jitter: float = 0.1
    seed: int = 0
    patience: int = 25  # min-max: outer iterations without progress before giving up

    def __post_init__(self):
        if not (self.step_init > 0 and self.grad_tol > 0 and self.max_iter > 0 and self.jitter >= 0):
            raise ConfigurationError("step_init, grad_tol and max_iter must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ConfigurationError("backtrack_factor must lie in (0, 1)")
        if self.gda_inner_steps < 1 or self.restarts < 0 or self.patience < 1:
            raise ConfigurationError("gda_inner_steps and patience must be >= 1 and restarts >= 0")


@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    iterations: int
    grad_norm: float
    objective: float
    weights: np.ndarray
    status: Status
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "theta_hat": [float(v) for v in self.theta_hat],
            "iterations": int(self.iterations),
            "grad_norm": float(self.grad_norm),
            "objective": float(self.objective),
            "status": self.status,
        }


def _slack(f: float) -> float:
    # rounding allowance for comparisons of proxy values
    return 1e-14 * max(1.0, abs(f))


class _Problem:
    """Blocked data plus everything needed to evaluate the proxies."""

    def __init__(self, data, model, scheme: BlockScheme, loss: SmoothLoss):
        self.model = model
        self.scheme = scheme
        self.loss = loss
        self.blocked = scheme.split(data)

    def means(self, theta):
        return block_loss_means(theta, self.blocked, self.model)

    def grads(self, theta):
        return block_grad_means(theta, self.blocked, self.model)

    def locate(self, values):
        """Root and normalized weights for a vector of block values."""
        if not np.all(np.isfinite(values)):
            return math.inf, None
        res = solve_location(values, self.scheme.scale, self.loss)
        raw = np.asarray(self.loss.deriv(self.scheme.scale * (values - res.value), 2), dtype=float)
        total = float(raw.sum())
        return res.value, (raw / total if total > 0 else None)

    def value(self, theta) -> float:
        if not self.model.feasible(theta):
            return math.inf
        return self.locate(self.means(theta))[0]

    def value_grad(self, theta):
        z, w = self.locate(self.means(theta))
        if w is None:
            raise DegenerateWeightsError("all block weights rho'' vanish at this iterate", np.array(theta))
        return z, w @ self.grads(theta), w

    def diff_value(self, theta, theta_prime) -> float:
        if not (self.model.feasible(theta) and self.model.feasible(theta_prime)):
            return math.nan
        return self.locate(self.means(theta) - self.means(theta_prime))[0]

    def diff_value_grads(self, theta, theta_prime):
        z, w = self.locate(self.means(theta) - self.means(theta_prime))
        if w is None:
            raise DegenerateWeightsError("all block weights rho'' vanish at this iterate", np.array(theta))
        return z, w @ self.grads(theta), -(w @ self.grads(theta_prime)), w


def robust_start(data, model, scheme: BlockScheme) -> np.ndarray:
    """Coordinatewise median of the per-block empirical risk minimizers."""
    blocked = scheme.split(data)
    if scheme.n <= model.dim:
        return np.asarray(model.erm(np.asarray(data, float)), dtype=float)
    return np.median(np.stack([model.erm(b) for b in blocked]), axis=0)


def robust_gradient(theta, data, model, scheme: BlockScheme, loss: SmoothLoss) -> np.ndarray:
    """Implicit gradient of the robust risk proxy at ``theta``."""
    return _Problem(data, model, scheme, loss).value_grad(np.asarray(theta, float))[1]


def _line_search(fg, x, fx, gx, config: SolverConfig, sign: float = 1.0):
    """Backtracking step along ``-sign * gx``; ``sign=-1`` searches for an ascent step.

    ``fg(x)`` returns ``(f, g, extra)`` with a non-finite ``f`` off the domain.
    A step is taken when it satisfies the Armijo condition or, once value
    differences are at rounding level, the approximate-Wolfe condition on the
    directional derivative. Returns ``(x_new, f_new, g_new, extra)`` or ``None``
    when the step collapses.
    """
    d = -sign * gx
    slope = float(gx @ gx)
    t = config.step_init
    while t >= MIN_STEP:
        x_new = x + t * d
        if np.array_equal(x_new, x):
            return None  # step below the resolution of x
        f_new, g_new, extra = fg(x_new)
        if np.isfinite(f_new):
            drop = sign * (f_new - fx)
            if drop <= -ARMIJO * t * slope:
                return x_new, f_new, g_new, extra
            if drop <= _slack(fx) and sign * float(g_new @ d) <= (1.0 - 2.0 * ARMIJO) * slope:
                return x_new, f_new, g_new, extra
        t *= config.backtrack_factor
    return None


def _empirical(problem: _Problem):
    flat = problem.blocked.reshape(-1, problem.blocked.shape[-1])

    def fg(theta):
        if not problem.model.feasible(theta):
            return math.inf, None, None
        return (float(np.mean(problem.model.loss(theta, flat))),
                problem.model.grad_loss(theta, flat).mean(axis=0), None)

    return fg


def _proxy_fg(problem: _Problem):
    def fg(theta):
        if not problem.model.feasible(theta):
            return math.inf, None, None
        try:
            return problem.value_grad(theta)
        except DegenerateWeightsError:
            return math.inf, None, None

    return fg


def _descend(problem: _Problem, theta, config: SolverConfig) -> EstimateResult:
    theta = np.array(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ConfigurationError("theta_init must be finite")
    history = []
    status: Status = "max_iter"
    weights = np.full(problem.scheme.k, 1.0 / problem.scheme.k)
    fg = _proxy_fg(problem)
    empirical = _empirical(problem)
    fx, g, w = fg(theta)
    degenerate = False
    gnorm = math.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        if w is None:
            # saturated blocks: one step along the plain empirical gradient
            degenerate = True
            fe, ge, _ = empirical(theta)
            if not np.isfinite(fe):
                raise NumericalError(f"non-finite empirical risk at theta={theta}")
            step = _line_search(empirical, theta, fe, ge, config)
            if step is None:
                break
            theta = step[0]
            fx, g, w = fg(theta)
            continue
        degenerate = False
        weights = w
        if not np.isfinite(fx):
            raise NumericalError(f"non-finite proxy value at theta={theta}")
        history.append(fx)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.grad_tol:
            status = "converged"
            break
        step = _line_search(fg, theta, fx, g, config)
        if step is None:
            break
        theta, fx, g, w = step
    if degenerate and status != "converged":
        status = "degenerate_weights"
        fx = problem.value(theta)
    return EstimateResult(theta, it, gnorm, fx, weights, status, history)


def minimize_robust(data, model, scheme: BlockScheme, loss: SmoothLoss,
                    config: SolverConfig | None = None, theta_init=None) -> EstimateResult:
    """Gradient descent with backtracking on the robust risk proxy.

    With ``config.restarts > 0`` extra starts are drawn around ``theta_init``
    (seeded by ``config.seed``) and the lowest proxy value wins.
    """
    config = config or SolverConfig()
    problem = _Problem(data, model, scheme, loss)
    theta_init = robust_start(data, model, scheme) if theta_init is None else np.asarray(theta_init, float)
    best = _descend(problem, theta_init, config)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.restarts):
        start = theta_init + config.jitter * rng.standard_normal(theta_init.shape)
        if not model.feasible(start):
            continue
        cand = _descend(problem, start, config)
        if cand.objective < best.objective:
            best = cand
    return best


def minmax_estimate(data, model, scheme: BlockScheme, loss: SmoothLoss,
                    config: SolverConfig | None = None, theta_init=None):
    """Saddle point of the robust proxy of risk differences by alternating GDA.

    Each outer iteration runs up to ``gda_inner_steps`` backtracking ascent steps
    in ``theta'`` and then one backtracking descent step in ``theta``.
    Returns ``(result_for_theta, result_for_theta_prime)``.
    """
    config = config or SolverConfig()
    problem = _Problem(data, model, scheme, loss)
    theta = np.array(robust_start(data, model, scheme) if theta_init is None else theta_init, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ConfigurationError("theta_init must be finite")
    theta_p = theta.copy()
    status: Status = "max_iter"
    history = []
    g = gp = np.full_like(theta, np.inf)
    w = np.full(scheme.k, 1.0 / scheme.k)
    fx = 0.0
    it = 0

    def degenerate_result(exc):
        return (EstimateResult(theta, it, math.inf, math.nan, w, "degenerate_weights", history),
                EstimateResult(theta_p, it, math.inf, math.nan, w, "degenerate_weights", history))

    def ascent_fg(tp):
        if not problem.model.feasible(tp):
            return -math.inf, None, None
        try:
            z, gt, gtp, wt = problem.diff_value_grads(theta, tp)
        except DegenerateWeightsError:
            return -math.inf, None, None
        return z, gtp, (gt, wt)

    def descent_fg(th):
        if not problem.model.feasible(th):
            return math.inf, None, None
        try:
            z, gt, gtp, wt = problem.diff_value_grads(th, theta_p)
        except DegenerateWeightsError:
            return math.inf, None, None
        return z, gt, (gtp, wt)

    try:
        fx, g, gp, w = problem.diff_value_grads(theta, theta_p)
    except DegenerateWeightsError as exc:
        return degenerate_result(exc)
    best, since_best = math.inf, 0
    for it in range(1, config.max_iter + 1):
        ascended = False
        for _ in range(config.gda_inner_steps):
            if float(np.linalg.norm(gp)) <= config.grad_tol:
                break
            step = _line_search(ascent_fg, theta_p, fx, gp, config, sign=-1.0)
            if step is None:
                break
            theta_p, fx, gp, (g, w) = step
            ascended = True
        history.append(fx)
        gn, gpn = float(np.linalg.norm(g)), float(np.linalg.norm(gp))
        if gn <= config.grad_tol and gpn <= config.grad_tol:
            status = "converged"
            break
        if gn + gpn < 0.5 * best:
            best, since_best = gn + gpn, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break  # oscillating without progress
        step = _line_search(descent_fg, theta, fx, g, config) if gn > config.grad_tol else None
        if step is None:
            if not ascended:
                break  # stalled: neither player can move
            continue
        theta, fx, g, (gp, w) = step
    r1 = EstimateResult(theta, it, float(np.linalg.norm(g)), fx, w, status, history)
    r2 = EstimateResult(theta_p, it, float(np.linalg.norm(gp)), fx, w, status, history)
    return r1, r2


def plain_erm(data, model, config: SolverConfig | None = None, theta_init=None) -> EstimateResult:
    """Empirical risk minimizer over all rows of ``data``.

    Starts from the model's closed form (unless ``theta_init`` is given) and
    polishes it by gradient descent.
    """
    config = config or SolverConfig()
    data = np.asarray(data, dtype=float)
    theta = np.array(model.erm(data) if theta_init is None else theta_init, dtype=float)

    def fg(th):
        if not model.feasible(th):
            return math.inf, None, None
        return float(np.mean(model.loss(th, data))), model.grad_loss(th, data).mean(axis=0), None

    status: Status = "max_iter"
    fx, g, _ = fg(theta)
    if not np.isfinite(fx):
        raise ConfigurationError("theta_init is outside the model's domain")
    gnorm = math.inf
    history = []
    it = 0
    for it in range(1, config.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        history.append(fx)
        if gnorm <= config.grad_tol:
            status = "converged"
            break
        step = _line_search(fg, theta, fx, g, config)
        if step is None:
            break
        # rows far from the bulk (outliers at 1e6) leave a roundoff floor on the
        # gradient; a step that cannot lower the objective beyond rounding is final
        stalled = fx - step[1] <= 4 * np.finfo(float).eps * max(1.0, abs(fx))
        theta, fx, g, _ = step
        if stalled:
            status = "converged"
            break
    return EstimateResult(theta, it, gnorm, fx, np.ones(1), status, history)
