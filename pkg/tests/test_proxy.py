import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_erm.errors import ConfigurationError, DataError
from robust_erm.models import ExponentialRate, GaussianLocation
from robust_erm.proxy import (contamination_block_count, mad_delta, make_blocks, robust_diff, robust_mean,
                              robust_risk, solve_location, u_statistic_proxy)
from robust_erm.smooth_loss import build_smoothed_huber

from oracles import grid_argmin

_TABLE = build_smoothed_huber(tabulate=True)


def m_objective(means, scale, loss=_TABLE):
    means = np.asarray(means, float)

    def f(z):
        z = np.atleast_1d(z)
        u = scale * (means[None, :] - z[:, None])
        return loss(u.ravel()).reshape(u.shape).sum(axis=1)

    return f


class _ConstantModel:
    dim = 1

    def __init__(self, c):
        self.c = c

    def loss(self, theta, x):
        return np.full(np.asarray(x).shape[:-1], self.c)


# -- blocks ---------------------------------------------------------------------

def test_make_blocks_even_split():
    s = make_blocks(10, 5)
    assert s.k == 5 and s.n == 2
    np.testing.assert_array_equal(s.blocks.ravel(), np.arange(10))


def test_make_blocks_drops_leftover():
    s = make_blocks(10, 3)
    assert (s.k, s.n) == (3, 3)
    assert s.assignment[9] == -1
    np.testing.assert_array_equal(s.assignment[:9], np.repeat([0, 1, 2], 3))


def test_make_blocks_shuffled():
    plain, shuffled = make_blocks(6, 3), make_blocks(6, 3, shuffle_seed=7)
    assert shuffled.blocks.shape == plain.blocks.shape
    assert sorted(shuffled.blocks.ravel()) == list(range(6))
    np.testing.assert_array_equal(shuffled.blocks, make_blocks(6, 3, shuffle_seed=7).blocks)


@pytest.mark.parametrize("N,k", [(10, 0), (10, 6), (1, 1)])
def test_make_blocks_rejects(N, k):
    with pytest.raises(ConfigurationError):
        make_blocks(N, k)


def test_delta_must_be_positive():
    with pytest.raises(ConfigurationError):
        make_blocks(10, 2, delta_n=0.0)


def test_split_requires_enough_rows():
    with pytest.raises(DataError):
        make_blocks(10, 2).split(np.zeros((8, 1)))


# -- robust mean ------------------------------------------------------------------

def test_single_block_returns_value(exact_loss):
    scheme = make_blocks(10, 1)
    assert robust_mean([3.25], scheme, exact_loss).value == 3.25


@pytest.mark.parametrize("a,delta", [(0.1, 1.0), (7.0, 0.3), (500.0, 2.0)])
def test_symmetric_pair(exact_loss, a, delta):
    scheme = make_blocks(40, 2, delta_n=delta)
    assert robust_mean([-a, a], scheme, exact_loss).value == pytest.approx(0.0, abs=1e-12)


def test_grid_oracle_three_blocks(exact_loss):
    means = [0.0, 1.0, 100.0]
    scale = math.sqrt(4) / 1.0
    res = solve_location(means, scale, exact_loss)
    oracle = grid_argmin(m_objective(means, scale), 0.0, 100.0, step=1e-6)
    assert abs(res.value - oracle) <= 1e-5
    assert abs(res.residual) <= 1e-12


def test_result_invariants(table_loss, rng):
    for _ in range(50):
        means = rng.standard_t(2.5, size=rng.integers(1, 30)) * 10
        res = solve_location(means, rng.uniform(0.5, 20), table_loss)
        assert means.min() <= res.value <= means.max()
        assert abs(res.residual) <= 1e-9 * max(1.0, len(means))
        assert res.bracket == (means.min(), means.max())


def test_flat_root_set_midpoint(table_loss):
    # all blocks saturated with a tie: the root set is an interval, its centre is returned
    res = solve_location([-500.0, 300.0], 2.0, table_loss)
    assert res.value == -100.0


@pytest.mark.parametrize("bad", [[1.0, math.nan], [math.inf], []])
def test_non_finite_means(table_loss, bad):
    with pytest.raises(DataError):
        solve_location(bad, 1.0, table_loss)


def test_bad_tolerance(table_loss):
    with pytest.raises(ConfigurationError):
        solve_location([1.0, 2.0], 1.0, table_loss, tol=0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=9), st.floats(-1e3, 1e3),
       st.floats(0.1, 30))
def test_translation_equivariance(means, shift, scale):
    means = np.array(means)
    a = solve_location(means, scale, _TABLE).value
    b = solve_location(means + shift, scale, _TABLE).value
    assert b == pytest.approx(a + shift, abs=1e-7 * (1 + abs(shift) + np.abs(means).max()))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=9), st.floats(0.1, 30))
def test_estimating_function_nonincreasing(means, scale):
    means = np.array(means)
    z = np.linspace(means.min() - 1, means.max() + 1, 257)
    psi = _TABLE.deriv(scale * (means[None, :] - z[:, None]), 1).sum(axis=1)
    assert np.all(np.diff(psi) <= 1e-12)


def test_majority_robustness(table_loss, rng):
    # corrupting fewer than k/2 blocks moves the estimate by at most the spread
    # of the untouched block means plus 4 delta / sqrt(n)
    n, delta = 25, 1.0
    scale = math.sqrt(n) / delta
    for _ in range(200):
        k = int(rng.integers(3, 20))
        means = rng.normal(size=k)
        bad = rng.choice(k, size=(k - 1) // 2, replace=False)
        corrupted = means.copy()
        corrupted[bad] = rng.choice([-1, 1], size=bad.size) * rng.uniform(1e2, 1e8, size=bad.size)
        clean = np.delete(means, bad)
        a = solve_location(means, scale, table_loss).value
        b = solve_location(corrupted, scale, table_loss).value
        assert abs(a - b) <= clean.max() - clean.min() + 4 * delta / math.sqrt(n) + 1e-9


# -- risk proxies -----------------------------------------------------------------

def test_constant_loss(exact_loss):
    data = np.zeros((20, 1))
    res = robust_risk(np.zeros(1), data, _ConstantModel(2.5), make_blocks(20, 4), exact_loss)
    assert res.value == 2.5


def test_single_block_is_empirical_risk(exact_loss, rng):
    model = GaussianLocation(2)
    data = model.sample(50, rng)
    theta = np.array([0.3, -0.2])
    res = robust_risk(theta, data, model, make_blocks(50, 1), exact_loss)
    assert res.value == pytest.approx(float(np.mean(model.loss(theta, data))), abs=1e-12)


def test_risk_near_population_value(table_loss, rng):
    model = GaussianLocation(1)
    data = model.sample(200_000, rng)
    res = robust_risk(model.theta0, data, model, make_blocks(200_000, 100), table_loss)
    # Var(l) = 1/2, so the proxy's sd is about sqrt(0.5 / N)
    assert abs(res.value - model.risk(model.theta0)) <= 4 * math.sqrt(0.5 / 200_000) * 1.2


def test_diff_same_argument_is_zero(table_loss, rng):
    model = ExponentialRate(2.0)
    data = model.sample(100, rng)
    assert robust_diff([1.3], [1.3], data, model, make_blocks(100, 10), table_loss).value == 0.0


def test_diff_antisymmetric(table_loss, rng):
    model = GaussianLocation(2)
    data = model.sample(300, rng)
    scheme = make_blocks(300, 15)
    a, b = np.array([0.4, 0.1]), np.array([-0.2, 0.3])
    fwd = robust_diff(a, b, data, model, scheme, table_loss).value
    bwd = robust_diff(b, a, data, model, scheme, table_loss).value
    assert fwd == pytest.approx(-bwd, abs=1e-12)


def test_diff_near_risk_difference(table_loss, rng):
    model = GaussianLocation(1)
    data = model.sample(100_000, rng)
    theta = np.array([0.5])
    res = robust_diff(theta, model.theta0, data, model, make_blocks(100_000, 50), table_loss)
    # l(theta) - l(theta0) = -theta x + theta^2/2 has sd 0.5
    assert abs(res.value - (model.risk(theta) - model.risk(model.theta0))) <= 4 * 0.5 / math.sqrt(1e5) * 1.2


# -- U-statistic proxy -------------------------------------------------------------

def test_u_stat_single_subset(exact_loss, rng):
    model = GaussianLocation(1)
    data = model.sample(8, rng)
    theta = np.array([0.2])
    assert u_statistic_proxy(theta, data, 8, model, exact_loss, 1.0) == pytest.approx(
        float(np.mean(model.loss(theta, data))), abs=1e-12)


def test_u_stat_permutation_invariant(table_loss, rng):
    model = GaussianLocation(1)
    data = model.sample(10, rng) * 3
    theta = np.array([0.1])
    ref = u_statistic_proxy(theta, data, 3, model, table_loss, 1.0)
    for _ in range(5):
        assert u_statistic_proxy(theta, rng.permutation(data), 3, model, table_loss, 1.0) == ref


def test_u_stat_grid_oracle(exact_loss):
    model = GaussianLocation(1)
    data = np.array([[-1.3], [0.2], [0.9], [2.4], [7.5], [-0.4]])
    theta = np.array([0.5])
    losses = model.loss(theta, data)
    means = np.array([losses[list(c)].mean() for c in combinations(range(6), 2)])
    scale = math.sqrt(2) / 0.7
    oracle = grid_argmin(m_objective(means, scale), means.min(), means.max(), step=1e-6)
    assert u_statistic_proxy(theta, data, 2, model, exact_loss, 0.7) == pytest.approx(oracle, abs=1e-5)


def test_u_stat_limits(table_loss):
    model = GaussianLocation(1)
    with pytest.raises(ConfigurationError, match="robust_risk"):
        u_statistic_proxy([0.0], np.zeros((13, 1)), 2, model, table_loss, 1.0)
    with pytest.raises(ConfigurationError):
        u_statistic_proxy([0.0], np.zeros((6, 1)), 0, model, table_loss, 1.0)
    with pytest.raises(ConfigurationError):
        u_statistic_proxy([0.0], np.zeros((6, 1)), 2, model, table_loss, 0.0)


# -- scale and block-count helpers ---------------------------------------------------

def test_mad_delta():
    means = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
    # median 3, absolute deviations {2, 1, 0, 1, 97}, MAD 1
    assert mad_delta(means, 16) == pytest.approx(1.4826 * 4)
    assert mad_delta(np.zeros(5), 16) == 0.1


def test_contamination_block_count():
    # N = 2000, kappa = 0.05, tau = 1: ceil(2000 * 0.05^(2/3)) = 272 >= 2 * 100 + 1
    assert contamination_block_count(2000, 0.05) == 272
    assert contamination_block_count(2000, 0.0) == 1
    assert contamination_block_count(1000, 0.2) == 401  # 2 O + 1 dominates
    with pytest.raises(ConfigurationError):
        contamination_block_count(100, 0.3)
