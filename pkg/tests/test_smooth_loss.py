import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_erm.errors import ConfigurationError, DomainError
from robust_erm.smooth_loss import (build_smoothed_huber, check_invariants, huber, huber_deriv, rho,
                                    rho_deriv)

from oracles import BUMP_MASS, convolution_ref, raw_bump
from scipy import integrate

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)


def test_bump_normalization(exact_loss):
    # adaptive quadrature of the unnormalized bump gives the constant independently
    assert exact_loss.bump_normalizer * BUMP_MASS == pytest.approx(1.0, abs=1e-12)
    xs, ws = np.polynomial.legendre.leggauss(400)
    assert 0.5 * np.sum(ws * exact_loss.bump(0.5 * xs)) == pytest.approx(1.0, abs=1e-12)


def test_huber_values():
    assert huber(1.0) == 0.5
    assert huber(2.0) == 1.875
    assert huber(-2.0) == 1.875
    assert huber_deriv(5.0) == 1.5 and huber_deriv(-0.3) == -0.3


@pytest.mark.parametrize("z", [0.3, 1.7, 5.0])
def test_rho_even(exact_loss, z):
    assert rho(exact_loss, z) - rho(exact_loss, -z) == pytest.approx(0.0, abs=1e-13)


def test_rho_quadratic_plateau(exact_loss):
    assert rho(exact_loss, 0.8) - rho(exact_loss, 0.0) == pytest.approx(0.32, abs=1e-12)


def test_rho_at_zero_matches_moment(exact_loss):
    ref = integrate.quad(lambda x: 0.5 * x * x * raw_bump(x) / BUMP_MASS, -0.5, 0.5,
                         epsabs=1e-16, epsrel=1e-13)[0]
    assert rho(exact_loss, 0.0) == pytest.approx(ref, abs=1e-13)
    assert ref == pytest.approx(0.009562115006936728, rel=1e-12)


def test_rho_deriv_examples(exact_loss):
    assert rho_deriv(exact_loss, 0.5, 1) == pytest.approx(0.5, abs=1e-12)
    assert rho_deriv(exact_loss, 3.0, 1) == pytest.approx(1.5, abs=1e-12)
    # H'' = 1{|y| <= 3/2}; at z = 1.5 the window covers [0, 1/2] of the even bump: exactly 1/2
    ref = integrate.quad(lambda x: raw_bump(x) / BUMP_MASS, 0.0, 0.5, epsabs=1e-16)[0]
    assert ref == pytest.approx(0.5, abs=1e-13)
    assert rho_deriv(exact_loss, 1.5, 2) == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("z", [-3.9, -1.9, -1.0, 0.0, 0.8, 1.3, 1.49, 1.7, 2.5, 3.9])
def test_matches_adaptive_convolution(exact_loss, table_loss, z):
    for loss in (exact_loss, table_loss):
        assert loss(z) == pytest.approx(convolution_ref(z, 0), abs=1e-10)
        assert loss.deriv(z, 1) == pytest.approx(convolution_ref(z, 1), abs=1e-10)


def test_table_agrees_with_exact_off_grid(exact_loss, table_loss, rng):
    z = rng.uniform(-4, 4, 2000)
    for k in range(5):
        scale = 1.0 if k < 3 else 10.0 ** (k - 2)
        assert np.max(np.abs(table_loss.deriv(z, k) - exact_loss.exact(z, k))) <= 1e-9 * scale


def test_order_five_uses_quadrature(exact_loss, table_loss):
    z = np.array([0.7, 1.2, 1.9])
    np.testing.assert_array_equal(table_loss.deriv(z, 5), exact_loss.exact(z, 5))


def test_plateaus_exact(exact_loss):
    a = np.linspace(-1, 1, 2001)
    assert np.max(np.abs(exact_loss.deriv(a, 1) - a)) <= 1e-12
    assert np.max(np.abs(exact_loss.deriv(a, 2) - 1.0)) <= 1e-12
    b = np.linspace(2, 10, 2001)
    assert np.max(np.abs(exact_loss.deriv(b, 1) - 1.5)) <= 1e-12
    assert np.max(np.abs(exact_loss.deriv(b, 2))) <= 1e-12


def _fd_error(loss, z, k, h):
    fd = (loss.deriv(z + h, k) - loss.deriv(z - h, k)) / (2 * h)
    return np.max(np.abs(fd - loss.deriv(z, k + 1)))


def test_finite_differences_orders_one_to_four(exact_loss):
    z = np.linspace(-3, 3, 100) + 1e-3
    for k in range(1, 4):
        assert _fd_error(exact_loss, z, k, 1e-4) <= 1e-5, k
    # rho^(7) reaches ~3e4 near |z| = 1.9, so the O(h^2) term of the k = 4
    # difference is ~5e-5 at h = 1e-4; at h = 1e-5 it is well inside 1e-5
    assert _fd_error(exact_loss, z, 4, 1e-5) <= 1e-5


def test_fourth_order_difference_error_is_truncation(exact_loss):
    z = np.linspace(-3, 3, 100) + 1e-3
    e1, e2 = _fd_error(exact_loss, z, 4, 1e-4), _fd_error(exact_loss, z, 4, 5e-5)
    assert e1 / e2 == pytest.approx(4.0, rel=0.05)


def test_dense_grid_bounds_and_monotonicity(table_loss):
    z = np.linspace(-10, 10, 200_001)
    d1 = table_loss.deriv(z, 1)
    d2 = table_loss.deriv(z, 2)
    assert np.max(np.abs(d1)) <= 1.5 + 1e-12
    assert d2.min() >= -1e-12 and d2.max() <= 1 + 1e-12
    assert np.all(np.diff(d1) >= -1e-12)
    assert np.all(np.diff(z - d1) >= -1e-12)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(min_value=0, max_value=1))
def test_convex_and_even(a, b, t):
    loss = _TABLE
    mid = loss(t * a + (1 - t) * b)
    assert mid <= t * loss(a) + (1 - t) * loss(b) + 1e-9 * (1 + abs(a) + abs(b))
    assert loss(a) == pytest.approx(loss(-a), abs=1e-12)
    assert loss.deriv(a, 1) == pytest.approx(-loss.deriv(-a, 1), abs=1e-12)


_TABLE = build_smoothed_huber(tabulate=True)


def test_invariant_report_clean(exact_loss):
    checks = check_invariants(exact_loss, points=2001)
    assert all(c.ok for c in checks), [c for c in checks if not c.ok]
    names = {c.name for c in checks}
    assert any("nondecreasing" in n for n in names)


@pytest.mark.parametrize("order", [0, 6, 2.5, -1])
def test_rho_deriv_rejects_bad_order(exact_loss, order):
    with pytest.raises(DomainError):
        rho_deriv(exact_loss, 0.1, order)


@pytest.mark.parametrize("z", [math.nan, math.inf, -math.inf])
def test_non_finite_argument(exact_loss, z):
    with pytest.raises(DomainError):
        rho(exact_loss, z)


@pytest.mark.parametrize("kwargs", [{"grid_step": 0.0}, {"grid_step": -1e-3}, {"quadrature_order": 8},
                                    {"quadrature_order": 16.5}])
def test_build_rejects_bad_configuration(kwargs):
    with pytest.raises(ConfigurationError):
        build_smoothed_huber(tabulate=True, **kwargs)


def test_loss_is_immutable(exact_loss):
    with pytest.raises(Exception):
        exact_loss.table = None
