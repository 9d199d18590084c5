"""``robust-erm`` command line: estimate, simulate, verify-loss.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
convergence failure.
"""
from __future__ import annotations

import argparse
import csv
import difflib
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .asymptotics import d_squared, v_squared
from .datagen import ContaminationSpec, NoiseSpec, contaminate, sample_clean
from .errors import ConfigurationError, DataError, RobustERMError
from .estimators import SolverConfig
from .harness import (ESTIMATOR_KINDS, MAX_WORK, DeltaPolicy, breakdown_curve, curve_svg, estimate,
                      histogram_svg, ks_normality, replicate, replications_csv, table_csv, to_json)
from .models import MODELS, ExponentialRate, GaussianLocation, LinearRegression
from .proxy import make_blocks, robust_risk
from .smooth_loss import HermiteTable, build_smoothed_huber, check_invariants

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(RobustERMError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    """Every setting a run can take; TOML keys use the same names."""

    model: str = "gaussian-location"
    d: int = 1
    sigma: float = 1.0
    lambda0: float = 1.0
    noise: Optional[str] = None
    data: Optional[str] = None
    N: int = 2000
    k: int = 20
    delta: object = 1.0
    estimator: list = field(default_factory=lambda: ["minmax_1"])
    kappa: float = 0.0
    kappas: Optional[list] = None
    breakdown_k: object = "kappa-rule"
    strategy: str = "fixed_point"
    outlier_location: float = 1e6
    replications: int = 200
    seed: Optional[int] = None
    threads: int = 1
    out_dir: str = "out"
    max_cov_rel_error: float = 0.15
    min_ks_pvalue: float = 0.001
    grad_tol: float = 1e-8
    max_iter: int = 500

    def validate(self) -> None:
        if self.model not in MODELS:
            close = difflib.get_close_matches(self.model, MODELS, n=3, cutoff=0.3)
            hint = f" did you mean {', '.join(close)}?" if close else ""
            raise ConfigurationError(f"unknown model {self.model!r};{hint} available: {', '.join(MODELS)}")
        for kind in self.estimator:
            if kind not in ESTIMATOR_KINDS:
                raise ConfigurationError(f"unknown estimator {kind!r}; choose from {', '.join(ESTIMATOR_KINDS)}")
        if self.N < 2:
            raise ConfigurationError("N must be at least 2")
        if not 1 <= self.k <= self.N / 2:
            raise ConfigurationError(f"need 1 <= k <= N/2 (got k={self.k}, N={self.N})")
        DeltaPolicy.parse(self.delta)
        if not 0 <= self.kappa < 1:
            raise ConfigurationError("kappa must lie in [0, 1)")
        if self.kappas is not None and any(not 0 <= x <= 0.4 for x in self.kappas):
            raise ConfigurationError("kappas must lie in [0, 0.4]")
        if self.breakdown_k != "kappa-rule":
            try:
                self.breakdown_k = int(self.breakdown_k)
            except (TypeError, ValueError):
                raise ConfigurationError("breakdown_k must be an integer or 'kappa-rule'") from None
        if self.replications < 2:
            raise ConfigurationError("replications must be >= 2")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.d < 1:
            raise ConfigurationError("d must be >= 1")

    def build_model(self):
        self.validate()
        noise = parse_noise(self.noise) if self.noise else None
        if self.model == "gaussian-location":
            return GaussianLocation(self.d, None, self.sigma, noise)
        if self.model == "linear-regression":
            return LinearRegression(self.d, noise=noise if noise is not None else NoiseSpec.gaussian(self.sigma))
        if self.d != 1:
            raise ConfigurationError("exponential-rate is one-dimensional")
        return ExponentialRate(self.lambda0)

    def solver(self) -> SolverConfig:
        return SolverConfig(grad_tol=self.grad_tol, max_iter=self.max_iter)


def parse_noise(text: str) -> NoiseSpec:
    """``gaussian:SIGMA``, ``student_t:DOF`` or ``pareto_symmetric:ALPHA``."""
    family, _, param = text.partition(":")
    try:
        value = float(param) if param else 1.0
    except ValueError:
        raise ConfigurationError(f"bad noise parameter in {text!r}") from None
    return NoiseSpec(family, value)


def _split_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t.strip() for t in str(text).split(",") if t.strip()]


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid TOML: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    aliases = {"out-dir": "out_dir", "outlier-location": "outlier_location", "breakdown-k": "breakdown_k"}
    out = {}
    for key, value in raw.items():
        name = aliases.get(key, key)
        if name not in known:
            close = difflib.get_close_matches(name, known, n=1)
            hint = f" (did you mean {close[0]!r}?)" if close else ""
            raise ConfigurationError(f"unknown config field {key!r}{hint}")
        out[name] = value
    return out


def make_config(args) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if "estimator" in values:
        values["estimator"] = _split_list(values["estimator"])
    if values.get("kappas") is not None:
        try:
            values["kappas"] = [float(x) for x in _split_list(values["kappas"])]
        except ValueError:
            raise ConfigurationError(f"kappas must be numbers, got {values['kappas']!r}") from None
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    for name in ("N", "k", "d", "replications", "threads", "max_iter"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
            raise ConfigurationError(f"{name} must be an integer, got {v!r}")
    cfg.validate()
    return cfg


# -- data files ---------------------------------------------------------------

def read_samples(path, columns: list[str]) -> np.ndarray:
    """CSV with a header naming the coordinates; errors cite the line number."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    rows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header != columns:
            raise DataError(f"{path}:1: header {header} does not match expected columns {columns}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise DataError(f"{path}:{line}: expected {len(columns)} fields, found {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}:{line}: non-numeric value in {row}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{line}: non-finite value in {row}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no samples")
    return np.array(rows, dtype=float)


def write_samples(path, data: np.ndarray, columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in np.atleast_2d(data):
            w.writerow([repr(float(v)) for v in row])


# -- commands -----------------------------------------------------------------

def cmd_estimate(args) -> int:
    cfg = make_config(args)
    model = cfg.build_model()
    if cfg.data:
        data = read_samples(cfg.data, model.columns())
    else:
        if cfg.seed is None:
            raise ConfigurationError("estimate needs --data or --seed to draw synthetic data")
        data = sample_clean(model, cfg.N, cfg.seed)
        if cfg.kappa > 0:
            spec = ContaminationSpec.from_kappa(cfg.kappa, cfg.N, strategy=cfg.strategy, location=cfg.outlier_location)
            data = contaminate(data, spec, cfg.seed + 1, model)
    N = len(data)
    if not 1 <= cfg.k <= N / 2:
        raise ConfigurationError(f"need 1 <= k <= N/2 (got k={cfg.k}, N={N})")
    loss = build_smoothed_huber(tabulate=True)
    scheme = make_blocks(N, cfg.k)
    delta = DeltaPolicy.parse(cfg.delta)
    out = {"model": model.snapshot(), "N": N, "k": scheme.k, "n": scheme.n, "results": {}}
    code = EXIT_OK
    for kind in cfg.estimator:
        theta, result, d = estimate(kind, data, model, scheme, loss, delta, cfg.solver())
        entry = {"theta_hat": [float(v) for v in theta]}
        if result is not None:
            entry.update(result.to_dict())
            if result.status != "converged":
                code = EXIT_NUMERICAL
        if not math.isnan(d):
            entry["delta"] = float(d)
            sch = scheme.with_delta(d)
            if kind == "direct":
                entry["proxy_value"] = robust_risk(theta, data, model, sch, loss).value
        out["results"][kind] = entry
    text = to_json(out)
    sys.stdout.write(text)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "estimate.json").write_text(text)
    return code


def _theory(kind, model, loss, delta_used):
    if kind in ("minmax_1", "minmax_2", "plain"):
        return d_squared(model)
    if kind == "direct":
        return v_squared(model, loss, delta_used)
    return None  # no limit theory for the U-statistic estimator


def cmd_simulate(args) -> int:
    cfg = make_config(args)
    if cfg.seed is None:
        raise ConfigurationError("simulate requires --seed (all randomness flows from it)")
    model = cfg.build_model()
    runs = len(cfg.estimator) * (1 + len(cfg.kappas or []))
    if runs * cfg.replications * cfg.N > MAX_WORK:
        raise ConfigurationError(f"requested work {runs} x R x N exceeds the resource guard {MAX_WORK}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loss = build_smoothed_huber(tabulate=True)
    contamination = None
    if cfg.kappa > 0:
        contamination = ContaminationSpec.from_kappa(cfg.kappa, cfg.N, strategy=cfg.strategy,
                                                     location=cfg.outlier_location)
    summary = {"config": {f.name: getattr(cfg, f.name) for f in fields(RunConfig)
                          if f.name not in ("out_dir", "threads")},
               "reports": {}}
    passed = True
    for kind in cfg.estimator:
        rs = replicate(model, cfg.N, cfg.k, cfg.delta, kind, contamination, cfg.replications, cfg.seed, loss,
                       cfg.solver(), cfg.threads)
        (out / f"replications_{kind}.csv").write_text(replications_csv(rs))
        entry = {"snapshot": rs.config, "rows": len(rs.errors), "failures": len(rs.failures),
                 "statuses": {s: rs.statuses.count(s) for s in sorted(set(rs.statuses))}}
        delta_used = rs.config["delta_median"] if rs.config["delta_median"] is not None else math.inf
        theory = _theory(kind, model, loss, delta_used)
        if theory is not None:
            rep = ks_normality(rs, theory)
            entry["normality"] = rep.to_dict()
            gated = contamination is None
            ok = rep.cov_rel_error <= cfg.max_cov_rel_error and min(rep.ks_pvalues) >= cfg.min_ks_pvalue
            entry["thresholds"] = {"max_cov_rel_error": cfg.max_cov_rel_error, "min_ks_pvalue": cfg.min_ks_pvalue,
                                   "checked": gated, "passed": bool(ok)}
            passed &= ok or not gated
            sd = np.sqrt(np.diag(theory.matrix))
            (out / f"histogram_{kind}.svg").write_text(
                histogram_svg(rs.errors[:, 0] / sd[0], f"{kind}: standardized error, coordinate 1"))
        summary["reports"][kind] = entry
    if cfg.kappas:
        rows = breakdown_curve(model, cfg.N, cfg.breakdown_k, cfg.estimator, cfg.kappas, cfg.replications, cfg.seed, loss,
                               cfg.delta, cfg.strategy, cfg.outlier_location, cfg.threads)
        (out / "breakdown.csv").write_text(table_csv(rows))
        (out / "breakdown.svg").write_text(curve_svg(rows))
        summary["breakdown"] = rows
    summary["passed"] = bool(passed)
    (out / "summary.json").write_text(to_json(summary))
    print(f"wrote {out}/summary.json; thresholds {'passed' if passed else 'FAILED'}")
    return EXIT_OK if passed else EXIT_NUMERICAL


def _break_table(loss):
    """Corrupt the rho' samples of the lookup table (test hook)."""
    t = loss.table
    values = t.values.copy()
    start = len(values[1]) // 4  # rho' on z in [0.5, 0.6]
    values[1, start:start + len(values[1]) // 20] += 1e-3
    return type(loss)(loss.quadrature_nodes, loss.quadrature_weights, loss.bump_normalizer,
                      HermiteTable(t.step, values, t.slopes))


def cmd_verify_loss(args) -> int:
    losses = {"exact": build_smoothed_huber(), "table": build_smoothed_huber(tabulate=True)}
    if args.break_table or os.environ.get("ROBUST_ERM_BREAK_TABLE") == "1":
        losses["table"] = _break_table(losses["table"])
    failed = []
    for label, loss in losses.items():
        for c in check_invariants(loss):
            mark = "ok  " if c.ok else "FAIL"
            print(f"{mark} [{label}] {c.name}: max violation {c.max_violation:.3e} (tol {c.tolerance:.0e})")
            if not c.ok:
                failed.append(f"[{label}] {c.name}")
    if failed:
        print("violated invariants: " + "; ".join(failed), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="TOML file with run settings (flags override it)")
    p.add_argument("--model", help=f"one of {', '.join(MODELS)}")
    p.add_argument("--d", type=int, help="parameter dimension")
    p.add_argument("--sigma", type=float, help="noise scale for the Gaussian models")
    p.add_argument("--lambda0", type=float, help="rate of the exponential model")
    p.add_argument("--noise", help="noise law, e.g. student_t:2.5")
    p.add_argument("--N", "--n-samples", dest="N", type=int, help="sample size for synthetic data")
    p.add_argument("--k", type=int, help="number of blocks")
    p.add_argument("--delta", help="scale factor: a positive number or 'mad'")
    p.add_argument("--estimator", help=f"comma-separated subset of {', '.join(ESTIMATOR_KINDS)}")
    p.add_argument("--kappa", type=float, help="contamination proportion")
    p.add_argument("--strategy", help="fixed_point, amplify or adaptive")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker processes")
    p.add_argument("--out-dir", dest="out_dir", help="directory for artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robust-erm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    est = sub.add_parser("estimate", help="fit estimators on a CSV file or synthetic data")
    _common(est)
    est.add_argument("--data", help="CSV sample file with a header row")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="Monte Carlo replications, normality and breakdown reports")
    _common(sim)
    sim.add_argument("--replications", type=int, help="number of replications R")
    sim.add_argument("--kappas", help="comma-separated contamination levels for a breakdown curve")
    sim.add_argument("--breakdown-k", dest="breakdown_k",
                     help="blocks for the breakdown curve: an integer or 'kappa-rule' (default)")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify-loss", help="check the smoothed Huber loss contract")
    ver.add_argument("--break-table", action="store_true", help=argparse.SUPPRESS)
    ver.set_defaults(func=cmd_verify_loss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except RobustERMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, UsageError) else exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
