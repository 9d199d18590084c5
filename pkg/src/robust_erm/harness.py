"""Monte Carlo harness: replicate estimators on seeded data and compare the
spread of the errors with the limiting covariances."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .asymptotics import AsymptoticCovariance
from .datagen import ContaminationSpec, contaminate, sample_clean
from .errors import ConfigurationError, HarnessError, NumericalError, ReportError
from .estimators import (EstimateResult, SolverConfig, minimize_robust, minmax_estimate, plain_erm,
                         robust_start)
from .proxy import (U_STAT_MAX_N, BlockScheme, block_loss_means, contamination_block_count, make_blocks,
                    mad_delta, robust_risk, u_statistic_proxy)
from .smooth_loss import SmoothLoss, build_smoothed_huber

EstimatorKind = Literal["direct", "minmax_1", "minmax_2", "plain", "u_stat"]
ESTIMATOR_KINDS = ("direct", "minmax_1", "minmax_2", "plain", "u_stat")

MAX_WORK = 10 ** 8  # guard on R * N
MAX_FAILURE_RATE = 0.05
KS_TERMS = 100


@dataclass(frozen=True)
class DeltaPolicy:
    """``constant`` uses ``value``; ``mad`` rescales block means at the iterate."""

    kind: Literal["constant", "mad"] = "constant"
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "mad"):
            raise ConfigurationError(f"unknown delta policy {self.kind!r}; use a positive number or 'mad'")
        if self.kind == "constant" and not (math.isfinite(self.value) and self.value > 0):
            raise ConfigurationError(f"constant delta must be positive and finite, got {self.value}")

    @classmethod
    def parse(cls, text) -> "DeltaPolicy":
        if isinstance(text, DeltaPolicy):
            return text
        if isinstance(text, str) and text.strip().lower() == "mad":
            return cls("mad")
        try:
            return cls("constant", float(text))
        except (TypeError, ValueError):
            raise ConfigurationError(f"delta must be a positive number or 'mad', got {text!r}") from None

    def resolve(self, data, model, scheme: BlockScheme, theta) -> float:
        if self.kind == "constant":
            return self.value
        return mad_delta(block_loss_means(theta, scheme.split(data), model), scheme.n)

    def describe(self):
        return self.value if self.kind == "constant" else "mad"


# -- single estimates ---------------------------------------------------------

def _u_stat_estimate(data, model, scheme: BlockScheme, loss, delta: DeltaPolicy) -> np.ndarray:
    data = np.asarray(data, float)
    if len(data) > U_STAT_MAX_N:
        raise ConfigurationError(f"u_stat estimator enumerates subsets and needs N <= {U_STAT_MAX_N}")
    start = np.asarray(model.erm(data), float)
    d = delta.resolve(data, model, scheme, start)

    def objective(theta):
        if not model.feasible(theta):
            return math.inf
        return u_statistic_proxy(theta, data, scheme.n, model, loss, d)

    res = optimize.minimize(objective, start, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    return np.asarray(res.x, float)


def estimate(kind: str, data, model, scheme: BlockScheme, loss: SmoothLoss,
             delta: DeltaPolicy, config: Optional[SolverConfig] = None):
    """Run one estimator; returns ``(theta_hat, EstimateResult or None, delta used)``.

    With the ``mad`` policy the scale is fixed at the starting point, the
    estimator is run, and then refitted once with the scale recomputed at the
    first estimate.
    """
    config = config or SolverConfig()
    if kind == "plain":
        r = plain_erm(data, model, config)
        return r.theta_hat, r, math.nan
    if kind == "u_stat":
        return _u_stat_estimate(data, model, scheme, loss, delta), None, math.nan
    if kind not in ESTIMATOR_KINDS:
        raise ConfigurationError(f"unknown estimator {kind!r}; choose from {', '.join(ESTIMATOR_KINDS)}")
    theta = robust_start(data, model, scheme)
    stages = 1 if delta.kind == "constant" else 2
    result = None
    d = delta.value
    for _ in range(stages):
        d = delta.resolve(data, model, scheme, theta)
        sch = scheme.with_delta(d)
        if kind == "direct":
            result = minimize_robust(data, model, sch, loss, config, theta)
        else:
            r1, r2 = minmax_estimate(data, model, sch, loss, config, theta)
            result = r1 if kind == "minmax_1" else r2
        theta = result.theta_hat
    return result.theta_hat, result, d


# -- replication --------------------------------------------------------------

@dataclass
class ReplicationSet:
    """Scaled errors ``sqrt(n k) (theta_hat - theta0)`` of the successful runs."""

    errors: np.ndarray
    estimates: np.ndarray
    estimator_kind: str
    config: dict
    replication_ids: np.ndarray
    statuses: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (replication id, message)

    def __post_init__(self):
        if len(self.errors) + len(self.failures) < 2:
            raise ConfigurationError("a replication set needs R >= 2")

    @property
    def R(self) -> int:
        return len(self.errors) + len(self.failures)

    @property
    def dim(self) -> int:
        return self.errors.shape[1]


def _one_replication(args):
    (i, seed_seq, model, N, scheme, delta, kind, contamination, loss, config) = args
    data_seed, cont_seed = _children(seed_seq, 2)
    try:
        data = sample_clean(model, N, data_seed)
        if contamination is not None and contamination.count_outliers > 0:
            data = contaminate(data, contamination, cont_seed, model)
        theta, result, d = estimate(kind, data, model, scheme, loss, delta, config)
        if not np.all(np.isfinite(theta)):
            raise NumericalError("non-finite estimate")
        status = "ok" if result is None else result.status
        return i, theta, status, d, None
    except NumericalError as exc:
        return i, None, "failed", math.nan, str(exc)


def _children(seq: np.random.SeedSequence, count: int) -> list:
    # unlike SeedSequence.spawn this does not advance seq, so reusing a seed reproduces the data
    return [np.random.SeedSequence(seq.entropy, spawn_key=seq.spawn_key + (j,), pool_size=seq.pool_size)
            for j in range(count)]


def _child_seeds(master_seed, R):
    return np.random.SeedSequence(master_seed).spawn(R)


def replicate(model, N: int, k: int, delta_policy="1.0", estimator_kind: str = "direct",
              contamination: Optional[ContaminationSpec] = None, R: int = 100, master_seed: int = 0,
              loss: Optional[SmoothLoss] = None, config: Optional[SolverConfig] = None,
              threads: int = 1, child_seeds=None) -> ReplicationSet:
    """Estimate on ``R`` independent datasets drawn from ``master_seed``.

    ``child_seeds`` overrides the per-replication seed sequences (testing hook).
    Replications that raise a numerical error are excluded and listed in
    ``failures``; more than 5% of them is a :class:`HarnessError`.
    """
    if R < 2:
        raise ConfigurationError(f"need R >= 2 replications, got {R}")
    if R * N > MAX_WORK:
        raise ConfigurationError(f"R * N = {R * N} exceeds the resource guard {MAX_WORK}")
    if estimator_kind not in ESTIMATOR_KINDS:
        raise ConfigurationError(f"unknown estimator {estimator_kind!r}; choose from {', '.join(ESTIMATOR_KINDS)}")
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    delta = DeltaPolicy.parse(delta_policy)
    scheme = make_blocks(N, k)
    loss = loss if loss is not None else build_smoothed_huber(tabulate=True)
    seeds = _child_seeds(master_seed, R) if child_seeds is None else list(child_seeds)
    if len(seeds) != R:
        raise ConfigurationError("need one child seed per replication")
    jobs = [(i, seeds[i], model, N, scheme, delta, estimator_kind, contamination, loss, config) for i in range(R)]
    if threads == 1:
        out = [_one_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_one_replication, jobs, chunksize=max(1, R // (4 * threads))))
    out.sort(key=lambda r: r[0])
    ok = [r for r in out if r[4] is None]
    failed = [(r[0], r[4]) for r in out if r[4] is not None]
    if len(failed) > MAX_FAILURE_RATE * R:
        raise HarnessError(f"{len(failed)} of {R} replications failed (limit 5%); first: {failed[0][1]}")
    d = model.dim
    estimates = np.array([r[1] for r in ok], dtype=float).reshape(len(ok), d)
    n_used = scheme.n * scheme.k
    errors = math.sqrt(n_used) * (estimates - model.theta0)
    deltas = [r[3] for r in ok if not math.isnan(r[3])]
    snapshot = {
        "model": model.snapshot(),
        "N": int(N), "k": int(scheme.k), "n": int(scheme.n), "samples_used": int(n_used),
        "delta_policy": delta.describe(),
        "delta_median": float(np.median(deltas)) if deltas else None,
        "estimator": estimator_kind,
        "contamination": None if contamination is None else {
            "count_outliers": contamination.count_outliers, "kappa": contamination.kappa,
            "strategy": contamination.strategy, "location": contamination.location,
            "scale": contamination.scale},
        "R": int(R), "master_seed": master_seed if child_seeds is None else "custom",
    }
    return ReplicationSet(errors, estimates, estimator_kind, snapshot,
                          np.array([r[0] for r in ok], dtype=int), [r[2] for r in ok], failed)


# -- normality ----------------------------------------------------------------

def kolmogorov_pvalue(stat: float, R: int, terms: int = KS_TERMS) -> float:
    """Asymptotic p-value ``2 sum_j (-1)^(j-1) exp(-2 j^2 R D^2)``, clipped to [0, 1]."""
    lam2 = R * stat * stat
    if lam2 < 1e-4:
        return 1.0
    j = np.arange(1, terms + 1)
    p = 2.0 * float(np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j * j * lam2)))
    return min(1.0, max(0.0, p))


def ks_statistic(x: np.ndarray) -> float:
    """Sup distance between the empirical CDF of ``x`` and the standard normal CDF."""
    x = np.sort(np.asarray(x, dtype=float))
    m = x.size
    cdf = special.ndtr(x)
    upper = np.arange(1, m + 1) / m - cdf
    lower = cdf - np.arange(m) / m
    return float(max(upper.max(), lower.max()))


@dataclass
class NormalityReport:
    ks_stats: list
    ks_pvalues: list
    cov_rel_error: float
    mean_norm: float
    empirical_cov: np.ndarray
    theory: AsymptoticCovariance
    R: int
    failures: int

    def to_dict(self) -> dict:
        return {
            "ks_stats": [float(s) for s in self.ks_stats],
            "ks_pvalues": [float(p) for p in self.ks_pvalues],
            "cov_rel_error": float(self.cov_rel_error),
            "mean_norm": float(self.mean_norm),
            "empirical_cov": self.empirical_cov.tolist(),
            "theory": self.theory.to_dict(),
            "rows": int(self.R - self.failures),
            "failures": int(self.failures),
        }


def op_norm(m) -> float:
    return float(np.linalg.norm(np.atleast_2d(m), 2))


def ks_normality(rs: ReplicationSet, theory: AsymptoticCovariance) -> NormalityReport:
    if theory.dim != rs.dim:
        raise ReportError(f"theory is {theory.dim}-dimensional but errors are {rs.dim}-dimensional")
    if len(rs.errors) < 2:
        raise ReportError("need at least two successful replications")
    sd = np.sqrt(np.diag(theory.matrix))
    if np.any(sd <= 0):
        raise ReportError("a coordinate has zero theoretical variance; cannot standardize")
    z = rs.errors / sd
    stats = [ks_statistic(z[:, i]) for i in range(rs.dim)]
    pvals = [kolmogorov_pvalue(s, len(z)) for s in stats]
    emp = np.atleast_2d(np.cov(rs.errors, rowvar=False))
    rel = op_norm(emp - theory.matrix) / op_norm(theory.matrix)
    return NormalityReport(stats, pvals, rel, float(np.linalg.norm(rs.errors.mean(axis=0))), emp, theory,
                           rs.R, len(rs.failures))


# -- contamination and concentration -----------------------------------------

def resolve_k(k_policy, N: int, kappas: Sequence[float], tau: float = 1.0) -> int:
    """Fixed ``k`` or ``"kappa-rule"``: the rule at the largest contamination level."""
    if isinstance(k_policy, str):
        if k_policy not in ("kappa-rule", "kappa_rule"):
            raise ConfigurationError(f"k policy must be an integer or 'kappa-rule', got {k_policy!r}")
        return contamination_block_count(N, max(kappas), tau)
    return int(k_policy)


def breakdown_curve(model, N: int, k_policy, estimator_kinds: Sequence[str], kappas: Sequence[float],
                    R: int, seed: int, loss: Optional[SmoothLoss] = None, delta_policy="1.0",
                    strategy: str = "fixed_point", location: float = 1e6, threads: int = 1) -> list[dict]:
    """Median ``|theta_hat - theta0|`` per (estimator, kappa).

    The same clean datasets (same seed) are used at every kappa, and the same
    ``k`` for every row, so rows differ only by the contamination.
    """
    kappas = [float(x) for x in kappas]
    if not kappas or any(not 0 <= x <= 0.4 for x in kappas):
        raise ConfigurationError("kappas must be a nonempty subset of [0, 0.4]")
    k = resolve_k(k_policy, N, kappas, model.moment_order)
    loss = loss if loss is not None else build_smoothed_huber(tabulate=True)
    rows = []
    for kind in estimator_kinds:
        for kappa in kappas:
            spec = ContaminationSpec.from_kappa(kappa, N, strategy=strategy, location=location)
            rs = replicate(model, N, k, delta_policy, kind, spec, R, seed, loss, threads=threads)
            err = np.linalg.norm(rs.estimates - model.theta0, axis=1)
            rows.append({"estimator": kind, "kappa": kappa, "outliers": spec.count_outliers, "k": rs.config["k"],
                         "n": rs.config["n"], "median_abs_error": float(np.median(err)),
                         "failures": len(rs.failures)})
    return rows


def concentration_check(model, theta, N_grid: Sequence[int], k: int, s_values: Sequence[float], R: int,
                        seed: int, loss: Optional[SmoothLoss] = None, delta: float = 1.0,
                        pilot_R: Optional[int] = None) -> list[dict]:
    """Exceedance frequencies of ``|L_hat(theta) - L(theta)|`` over ``C (sqrt(s/N) + k/N)``.

    For every ``N`` the constant ``C`` is calibrated on an independent pilot run
    as the smallest value whose pilot exceedance frequency is at most ``1/s``
    for every ``s``; the main run then reports the frequencies. The plain
    empirical risk over the same samples gets its own constant, so the
    constants across ``N`` show how each deviation scales against the bound.
    """
    if R < 2 or any(s < 1 for s in s_values):
        raise ConfigurationError("need R >= 2 and s >= 1")
    pilot_R = pilot_R or R
    if max(R, pilot_R) * max(N_grid) > MAX_WORK:
        raise ConfigurationError(f"R * N exceeds the resource guard {MAX_WORK}")
    loss = loss if loss is not None else build_smoothed_huber(tabulate=True)
    theta = np.asarray(theta, float)
    target = model.risk(theta)

    def deviations(N, seeds):
        scheme = make_blocks(N, k, delta_n=delta)
        rob, plain = [], []
        for s in seeds:
            x = sample_clean(model, N, s)
            rob.append(abs(robust_risk(theta, x, model, scheme, loss).value - target))
            used = x[scheme.blocks.ravel()]
            plain.append(abs(float(np.mean(model.loss(theta, used))) - target))
        return np.array(rob), np.array(plain)

    def calibrate(dev, N):
        return max(float(np.quantile(dev, 1.0 - 1.0 / s)) / (math.sqrt(s / N) + k / N) for s in s_values)

    rows = []
    for N, child in zip(N_grid, np.random.SeedSequence(seed).spawn(len(N_grid))):
        pilot_seed, main_seed = child.spawn(2)
        p_rob, p_plain = deviations(N, pilot_seed.spawn(pilot_R))
        c_rob, c_plain = calibrate(p_rob, N), calibrate(p_plain, N)
        rob, plain = deviations(N, main_seed.spawn(R))
        for s in s_values:
            scale = math.sqrt(s / N) + k / N
            rows.append({"N": int(N), "s": float(s), "bound": 1.0 / s,
                         "c_robust": c_rob, "threshold_robust": c_rob * scale,
                         "freq_robust": float(np.mean(rob > c_rob * scale)),
                         "c_plain": c_plain, "threshold_plain": c_plain * scale,
                         "freq_plain": float(np.mean(plain > c_plain * scale)),
                         "binomial_se": math.sqrt((1.0 / s) * (1 - 1.0 / s) / R)})
    return rows


# -- artifacts ----------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def replications_csv(rs: ReplicationSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "status"] + [f"error_{i + 1}" for i in range(rs.dim)])
    for rid, status, row in zip(rs.replication_ids, rs.statuses, rs.errors):
        w.writerow([int(rid), status] + [_fmt(v) for v in row])
    for rid, msg in rs.failures:
        w.writerow([int(rid), "failed"] + [""] * rs.dim)
    return buf.getvalue()


def table_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({key: (_fmt(v) if isinstance(v, float) else v) for key, v in r.items()})
    return buf.getvalue()


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def histogram_svg(values, title: str = "", bins: int = 40, width: int = 480, height: int = 240) -> str:
    """Minimal SVG histogram of ``values`` with the standard normal density overlaid."""
    v = np.asarray(values, dtype=float)
    lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    counts = counts / (v.size * (edges[1] - edges[0])) if v.size else counts.astype(float)
    xs = np.linspace(lo, hi, 200)
    dens = np.exp(-0.5 * xs * xs) / math.sqrt(2 * math.pi)
    top = max(float(counts.max()) if counts.size else 1.0, float(dens.max()), 1e-12)
    pad = 20

    def px(x):
        return pad + (x - lo) / (hi - lo) * (width - 2 * pad)

    def py(y):
        return height - pad - y / top * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{pad}" y="14" font-size="12">{title}</text>']
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        parts.append(f'<rect x="{px(a):.3f}" y="{py(c):.3f}" width="{px(b) - px(a):.3f}" '
                     f'height="{py(0) - py(c):.3f}" fill="#9ab" stroke="#567"/>')
    pts = " ".join(f"{px(x):.3f},{py(y):.3f}" for x, y in zip(xs, dens))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#c33"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def curve_svg(rows: list[dict], width: int = 480, height: int = 240) -> str:
    """Log-scale median error against kappa, one polyline per estimator."""
    kinds = sorted({r["estimator"] for r in rows})
    kap = [r["kappa"] for r in rows]
    err = [max(r["median_abs_error"], 1e-300) for r in rows]
    x0, x1 = min(kap), max(kap)
    y0, y1 = math.log10(min(err)), math.log10(max(err))
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    pad = 30
    colors = ["#c33", "#36c", "#393", "#963", "#939"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for i, kind in enumerate(kinds):
        sel = [r for r in rows if r["estimator"] == kind]
        pts = " ".join(
            f"{pad + (r['kappa'] - x0) / (x1 - x0) * (width - 2 * pad):.3f},"
            f"{height - pad - (math.log10(max(r['median_abs_error'], 1e-300)) - y0) / (y1 - y0) * (height - 2 * pad):.3f}"
            for r in sel)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colors[i % len(colors)]}"/>')
        parts.append(f'<text x="{width - 110}" y="{16 + 14 * i}" font-size="11" '
                     f'fill="{colors[i % len(colors)]}">{kind}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
