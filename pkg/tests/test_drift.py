import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sp_integrate

from sinhrates import McConfig, ModelParams, mc_discount, zcb_price
from sinhrates.drift import DriftTable, f1_functional, f2_functional, g1_integrand, r1_star, r2_star
from sinhrates.termstructure import discount

ALPHA = 0.15


@pytest.fixture(scope="module")
def rep():
    return ModelParams.constant(0.01, ALPHA, 50.0, 0.004, horizon=11.0)


def test_r1_at_time_zero(rep):
    assert r1_star(rep, 0.0) == pytest.approx(-math.sinh(50 * 0.004) / 50, rel=1e-14)


def test_r1_vanishes_without_randomness_or_skew():
    m = ModelParams.constant(0.0, ALPHA, 50.0, 0.0, horizon=3.0)
    assert r1_star(m, 1.7) == 0.0
    assert np.all(m.drift.r1_values == 0.0)


def test_r1_hull_white_limit_is_the_convexity_term():
    # closed-form HW Sigma_rz(0, t) for constant alpha, sigma
    m = ModelParams.constant(0.01, ALPHA, 1e-6, 0.0, horizon=6.0)
    a, s2 = ALPHA, 0.01 ** 2
    for t in (1.0, 3.0, 5.0):
        srz = s2 / (2 * a) * ((1 - math.exp(-a * t)) / a - (math.exp(-a * t) - math.exp(-2 * a * t)) / a)
        assert r1_star(m, t) == pytest.approx(srz, rel=1e-8)


def test_deterministic_drift_cancels_the_skew():
    m = ModelParams.constant(0.0, ALPHA, 50.0, 0.004, horizon=3.0)
    assert r1_star(m, 2.0) == pytest.approx(-math.sinh(0.2) / 50, rel=1e-14)
    assert abs(m.drift.r2(2.0)) < 1e-14


@pytest.mark.parametrize("t", [0.3, 1.0, 4.0, 10.0])
def test_r1_forms_agree(rep, t):
    assert r1_star(rep, t, form="pm") == pytest.approx(r1_star(rep, t), rel=1e-12)


def test_drift_table_matches_direct_quadrature(rep):
    for t in (0.0, 0.37, 2.0, 7.9):
        assert rep.drift.r1(t) == pytest.approx(r1_star(rep, t), rel=1e-10)
    direct = sp_integrate.quad(lambda s: r1_star(rep, s), 0, 2.0, epsabs=0, epsrel=1e-12, limit=200)[0]
    assert rep.drift.int_r1(2.0) == pytest.approx(direct, rel=1e-10)


def test_r1_with_time_dependent_parameters():
    from sinhrates.termstructure import PiecewiseCurve
    m = ModelParams(PiecewiseCurve.from_pairs([0, 1.0, 3.0], [0.008, 0.012, 0.01]),
                    PiecewiseCurve.from_pairs([0, 2.0], [0.1, 0.2]),
                    PiecewiseCurve.from_pairs([0, 1.5], [80.0, 40.0]),
                    PiecewiseCurve.from_pairs([0, 2.5], [0.003, 0.001]),
                    ModelParams.constant(0.01, 0.1, 1.0).discount, horizon=5.0)
    for t in (0.5, 1.2, 2.7, 4.4):
        assert r1_star(m, t, form="pm") == pytest.approx(r1_star(m, t), rel=1e-12)
        assert m.drift.r1(t) == pytest.approx(r1_star(m, t), rel=1e-10)


def test_r2_product_form(rep):
    assert r2_star(rep, 0.0) == 0.0
    zero = ModelParams.constant(0.0, ALPHA, 50.0, 0.0, horizon=3.0)
    assert r2_star(zero, 1.4) == 0.0
    for t in (0.5, 2.0, 6.0):
        r1, i1 = rep.drift.r1(t), rep.drift.int_r1(t)
        assert r1 < 0
        assert np.sign(r2_star(rep, t)) == -np.sign(i1)
        direct = r1_star(rep, t) * sp_integrate.quad(lambda s: r1_star(rep, s), 0, t, epsrel=1e-12,
                                                     limit=200)[0]
        assert r2_star(rep, t) == pytest.approx(direct, rel=1e-9)


def test_calibrated_drift_reprices_the_curve(rep):
    for T in (0.5, 1.0, 3.0, 7.5, 11.0):
        assert zcb_price(rep, 0.0, 0.0, T) == pytest.approx(discount(rep.discount, 0, T), rel=1e-12)


def test_product_drift_leaves_a_second_order_error(rep):
    prod = DriftTable(rep, r2="product")
    cal = rep.drift
    gap = abs(prod.int_r2(10.0) - cal.int_r2(10.0))
    eps = 50.0 ** 2 * 0.01 ** 2 * (1 - math.exp(-2 * ALPHA * 10)) / (2 * ALPHA)
    assert 0 < gap < eps ** 2


def test_first_order_condition_small(rep):
    # F1(0, T) is what the calibrated R1* kills at first order; what remains is O(eps^2)
    for T in (1.0, 5.0, 10.0):
        eps = 2500 * 1e-4 * (1 - math.exp(-2 * ALPHA * T)) / (2 * ALPHA)
        assert abs(f1_functional(rep, 0.0, 0.0, T)) < eps ** 2


def test_deterministic_bond_functionals():
    m = ModelParams.constant(0.0, ALPHA, 50.0, 0.0, horizon=6.0)
    assert f1_functional(m, 0.0, 0.0, 5.0) == 0.0
    assert f2_functional(m, 0.0, 5.0) == 0.0
    # with sigma = 0 the path is y phi(t, u); the exact bond is available in closed form
    for y in (-0.004, 0.002, 0.006):
        t, T = 1.0, 4.0
        exact_excess = sp_integrate.quad(lambda u: math.sinh(50 * y * math.exp(-ALPHA * (u - t))) / 50, t, T,
                                         epsabs=0, epsrel=1e-13)[0]
        exact = discount(m.discount, t, T) * math.exp(-exact_excess)
        f1 = f1_functional(m, y, t, T)
        assert zcb_price(m, y, t, T) == pytest.approx(exact, rel=2 * abs(f1) ** 3)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.004, 0.015), st.floats(20.0, 100.0), st.floats(-0.005, 0.005))
def test_second_order_functional_structure(sigma, gamma, ystar):
    m = ModelParams.constant(sigma, ALPHA, gamma, ystar, horizon=4.0)
    t, T = 0.0, 3.0
    f1 = f1_functional(m, 0.0, t, T)
    ordered = sp_integrate.dblquad(
        lambda t2, t1: float(g1_integrand(m, 0.0, t, t1, T) * g1_integrand(m, 0.0, t, t2, T)),
        t, T, lambda t1: t1, T, epsabs=1e-14, epsrel=1e-9)[0]
    assert ordered == pytest.approx(0.5 * f1 * f1, rel=1e-7, abs=1e-14)
    assert f2_functional(m, t, T) == pytest.approx(0.5 * f1 * f1 - m.drift.int_r2(T), rel=1e-12, abs=1e-16)


def test_mc_discount_matches_curve_short_dates(rep):
    est, se = mc_discount(rep, [1.0, 2.0], McConfig(paths=100_000, seed=11, workers=2))
    D = rep.discount(np.array([1.0, 2.0]))
    assert np.all(np.abs(est - D) <= 3 * se)
