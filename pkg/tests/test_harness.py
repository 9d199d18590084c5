import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from scipy import stats

from robust_erm import harness
from robust_erm.asymptotics import AsymptoticCovariance, v_squared
from robust_erm.datagen import sample_clean
from robust_erm.errors import ConfigurationError, HarnessError, NumericalError, ReportError
from robust_erm.harness import (DeltaPolicy, ReplicationSet, breakdown_curve, concentration_check, curve_svg,
                                estimate, histogram_svg, kolmogorov_pvalue, ks_normality, ks_statistic,
                                replicate, replications_csv, resolve_k, table_csv, to_json)
from robust_erm.models import ExponentialRate, GaussianLocation
from robust_erm.proxy import make_blocks


def _rs(errors):
    errors = np.asarray(errors, float).reshape(len(errors), -1)
    return ReplicationSet(errors, errors, "direct", {}, np.arange(len(errors)))


def _cov(m):
    return AsymptoticCovariance(np.atleast_2d(np.asarray(m, float)), "V2", 1.0)


# -- replication ---------------------------------------------------------------

def test_identical_child_seeds_give_identical_rows(table_loss):
    seed = np.random.SeedSequence(99)
    rs = replicate(GaussianLocation(2), 200, 10, R=2, loss=table_loss, child_seeds=[seed, seed])
    np.testing.assert_array_equal(rs.errors[0], rs.errors[1])
    assert rs.config["master_seed"] == "custom"


def test_plain_row_is_scaled_mean_error(table_loss):
    model = GaussianLocation(1, mu=[0.7])
    rs = replicate(model, 500, 10, estimator_kind="plain", R=3, master_seed=4, loss=table_loss)
    for i, seq in enumerate(np.random.SeedSequence(4).spawn(3)):
        x = sample_clean(model, 500, seq.spawn(2)[0])
        assert rs.errors[i, 0] == pytest.approx(math.sqrt(500) * (x.mean() - 0.7), abs=1e-9)


def test_direct_variance_matches_v_squared(table_loss):
    model = GaussianLocation(1)
    rs = replicate(model, 2000, 20, "1.0", "direct", R=2000, master_seed=8, loss=table_loss)
    v2 = v_squared(model, table_loss, 1.0).matrix[0, 0]
    assert not rs.failures
    assert np.var(rs.errors[:, 0], ddof=1) == pytest.approx(v2, rel=0.10)


def test_threads_do_not_change_results(table_loss):
    model = ExponentialRate(1.0)
    a = replicate(model, 300, 10, R=6, master_seed=2, loss=table_loss)
    b = replicate(model, 300, 10, R=6, master_seed=2, loss=table_loss, threads=2)
    np.testing.assert_array_equal(a.errors, b.errors)
    assert len(a.errors) + len(a.failures) == a.R == 6


def _flaky(fail_ids):
    real = harness.estimate
    calls = {"n": 0}

    def fake(*args, **kwargs):
        i = calls["n"]
        calls["n"] += 1
        if i in fail_ids:
            raise NumericalError(f"injected failure {i}")
        return real(*args, **kwargs)

    return fake


def test_failures_under_limit_are_recorded(monkeypatch, table_loss):
    monkeypatch.setattr(harness, "estimate", _flaky({3}))
    rs = replicate(GaussianLocation(1), 100, 5, R=40, master_seed=1, loss=table_loss)
    assert rs.failures == [(3, "injected failure 3")]
    assert len(rs.errors) == 39 and 3 not in rs.replication_ids
    assert replications_csv(rs).splitlines()[-1] == "3,failed,"


def test_failures_over_limit_raise(monkeypatch, table_loss):
    monkeypatch.setattr(harness, "estimate", _flaky({0, 5, 7}))
    with pytest.raises(HarnessError, match="3 of 40"):
        replicate(GaussianLocation(1), 100, 5, R=40, master_seed=1, loss=table_loss)


@pytest.mark.parametrize("kwargs", [{"R": 1}, {"R": 10 ** 5, "N": 10 ** 4}, {"estimator_kind": "median"},
                                    {"threads": 0}, {"delta_policy": "-1"}])
def test_replicate_guards(kwargs, table_loss):
    args = {"N": 100, "R": 2}
    args.update(kwargs)
    N, R = args.pop("N"), args.pop("R")
    with pytest.raises(ConfigurationError):
        replicate(GaussianLocation(1), N, 5, R=R, loss=table_loss, **args)


# -- normality -------------------------------------------------------------------

def test_ks_statistic_matches_scipy(rng):
    x = rng.normal(size=300)
    assert ks_statistic(x) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-14)


def test_ks_statistic_two_point():
    # the empirical CDF jumps to 1/2 at -1; the normal CDF there is Phi(-1)
    assert ks_statistic(np.array([-1.0, 1.0] * 50)) == pytest.approx(stats.norm.cdf(1) - 0.5, abs=1e-12)
    assert ks_statistic(np.array([-1.0, 1.0] * 50)) == pytest.approx(0.3413, abs=1e-4)


@pytest.mark.parametrize("stat", [0.005, 0.02, 0.04, 0.1])
def test_kolmogorov_pvalue_matches_scipy(stat):
    R = 1000
    assert kolmogorov_pvalue(stat, R) == pytest.approx(stats.kstwobign.sf(math.sqrt(R) * stat), abs=1e-12)


def test_ks_null_and_alternative():
    for seed in range(5):
        z = np.random.default_rng(seed).normal(size=5000)
        assert ks_normality(_rs(z), _cov(1.0)).ks_pvalues[0] >= 0.001
    shifted = np.random.default_rng(0).normal(0.2, 1.0, size=5000)
    assert ks_normality(_rs(shifted), _cov(1.0)).ks_pvalues[0] < 1e-6


def test_ks_normality_standardizes_and_reports(rng):
    e = rng.multivariate_normal([0, 0], [[4.0, 1.0], [1.0, 2.0]], size=4000)
    rep = ks_normality(_rs(e), _cov([[4.0, 1.0], [1.0, 2.0]]))
    assert min(rep.ks_pvalues) >= 0.001 and rep.cov_rel_error <= 0.1
    d = rep.to_dict()
    assert d["rows"] == 4000 and d["failures"] == 0 and len(d["ks_stats"]) == 2


def test_ks_normality_errors():
    with pytest.raises(ReportError):
        ks_normality(_rs(np.zeros((5, 2))), _cov(1.0))
    with pytest.raises(ReportError):
        ks_normality(_rs(np.zeros((5, 2))), _cov([[0.0, 0.0], [0.0, 1.0]]))


# -- breakdown --------------------------------------------------------------------

def test_breakdown_curve(table_loss):
    model = GaussianLocation(1)
    rows = breakdown_curve(model, 2000, "kappa-rule", ["direct", "plain"], [0.0, 0.05], 20, 3, table_loss)
    by = {(r["estimator"], r["kappa"]): r for r in rows}
    assert all(r["k"] == 272 for r in rows)
    # kappa = 0 is an ordinary clean run with the shared k
    clean = replicate(model, 2000, 272, "1.0", "direct", None, 20, 3, table_loss)
    assert by["direct", 0.0]["median_abs_error"] == float(np.median(np.abs(clean.estimates[:, 0])))
    # 100 outliers at 1e6 shift the mean by 5e4
    assert by["plain", 0.05]["median_abs_error"] == pytest.approx(0.05 * 1e6, rel=1e-3)
    assert by["direct", 0.05]["median_abs_error"] <= 5 * by["direct", 0.0]["median_abs_error"]
    assert by["direct", 0.05]["outliers"] == 100


@pytest.mark.parametrize("kappas", [[], [0.5], [-0.1]])
def test_breakdown_rejects_kappas(kappas, table_loss):
    with pytest.raises(ConfigurationError):
        breakdown_curve(GaussianLocation(1), 100, 5, ["direct"], kappas, 2, 0, table_loss)


def test_resolve_k():
    assert resolve_k(7, 100, [0.1]) == 7
    assert resolve_k("kappa-rule", 2000, [0.0, 0.02, 0.05]) == 272
    with pytest.raises(ConfigurationError):
        resolve_k("lots", 100, [0.1])


# -- concentration -----------------------------------------------------------------

def test_concentration_trivial_level(table_loss):
    rows = concentration_check(GaussianLocation(1), [0.0], [200], 10, [1.0], 50, 0, table_loss)
    assert rows[0]["freq_robust"] <= 1.0 and rows[0]["bound"] == 1.0


def test_concentration_gaussian_profile(table_loss):
    rows = concentration_check(GaussianLocation(1), [0.0], [500, 2000], 20, [5, 10, 20], 400, 1, table_loss)
    for r in rows:
        se = math.sqrt(r["bound"] * (1 - r["bound"]) / 400)
        assert r["freq_robust"] <= r["bound"] + 2 * se, r
        assert r["freq_plain"] <= r["bound"] + 2 * se, r
    # light tails: the calibrated constant barely moves with N
    c = [r["c_robust"] for r in rows if r["s"] == 5]
    assert c[1] / c[0] <= 1.5


def test_concentration_guards(table_loss):
    with pytest.raises(ConfigurationError):
        concentration_check(GaussianLocation(1), [0.0], [100], 5, [0.5], 10, 0, table_loss)
    with pytest.raises(ConfigurationError):
        concentration_check(GaussianLocation(1), [0.0], [10 ** 7], 5, [2], 100, 0, table_loss)


# -- delta policy and single estimates -------------------------------------------------

def test_delta_policy_parse():
    assert DeltaPolicy.parse("2.5") == DeltaPolicy("constant", 2.5)
    assert DeltaPolicy.parse(" MAD ").kind == "mad"
    assert DeltaPolicy.parse(DeltaPolicy("mad")).describe() == "mad"
    for bad in ("zero", "0", "inf", None):
        with pytest.raises(ConfigurationError):
            DeltaPolicy.parse(bad)


def test_mad_policy_runs_two_stages(table_loss, rng):
    model = GaussianLocation(1)
    data = model.sample(400, rng)
    scheme = make_blocks(400, 20)
    theta, res, d = estimate("direct", data, model, scheme, table_loss, DeltaPolicy("mad"))
    assert res.status == "converged" and d > 0
    # the scale reported is the one recomputed at the first-stage estimate
    stage1, _, _ = estimate("direct", data, model, scheme, table_loss,
                            DeltaPolicy.parse(DeltaPolicy("mad").resolve(data, model, scheme,
                                                                          harness.robust_start(data, model, scheme))))
    assert d == pytest.approx(DeltaPolicy("mad").resolve(data, model, scheme, stage1))


def test_u_stat_estimator_small_sample(table_loss, rng):
    model = GaussianLocation(1)
    data = model.sample(10, rng)
    theta, res, _ = estimate("u_stat", data, model, make_blocks(10, 5), table_loss, DeltaPolicy())
    assert res is None and abs(theta[0] - data.mean()) <= 0.5
    with pytest.raises(ConfigurationError):
        estimate("u_stat", model.sample(13, rng), model, make_blocks(13, 5), table_loss, DeltaPolicy())


def test_unknown_estimator(table_loss, rng):
    model = GaussianLocation(1)
    with pytest.raises(ConfigurationError):
        estimate("median", model.sample(10, rng), model, make_blocks(10, 2), table_loss, DeltaPolicy())


# -- artifacts ----------------------------------------------------------------------

def test_writers(rng):
    rs = _rs(rng.normal(size=(5, 2)))
    rs.statuses = ["converged"] * 5
    lines = replications_csv(rs).splitlines()
    assert lines[0] == "replication,status,error_1,error_2" and len(lines) == 6
    rows = [{"estimator": "direct", "kappa": 0.0, "median_abs_error": 0.1}]
    assert table_csv(rows).splitlines() == ["estimator,kappa,median_abs_error", "direct,0.0,0.1"]
    assert table_csv([]) == ""
    assert to_json({"b": 1, "a": [1.5]}) == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
    for svg in (histogram_svg(rs.errors[:, 0], "e1"), histogram_svg([]), curve_svg(rows + [
            {"estimator": "plain", "kappa": 0.05, "median_abs_error": 5e4}])):
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
