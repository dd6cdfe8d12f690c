import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinhrates import InstrumentSpec, McConfig, ModelParams, forward_rate, price, zcb_price
from sinhrates.drift import f1_functional
from sinhrates.kernelmath import kernel_stats
from sinhrates.numerics import DegenerateCovarianceError
from sinhrates.oracle import mc_estimate, mc_price_many
from sinhrates.pricing import (kernel_price_rfr_caplet, price_by_kernel_quadrature, price_libor_caplet,
                               price_rfr_caplet, price_swaption, strike_net_of_spread)
from sinhrates.termstructure import DomainError, discount

D = lambda t: math.exp(-0.02 * t)


@pytest.fixture(scope="module")
def tiny():
    return ModelParams.constant(1e-7, 0.15, 50.0, 0.0, horizon=4.0)


@pytest.fixture(scope="module")
def mc_run(smile):
    insts = [InstrumentSpec.caplet(1.0, 1.5, 0.02), InstrumentSpec.caplet(1.0, 1.5, 0.02, libor=True),
             InstrumentSpec.swaption([1.0, 1.25, 1.5], 0.02), InstrumentSpec.caplet(1.0, 1.5, 0.03)]
    pv, se = mc_price_many(smile, insts, McConfig(paths=200_000, seed=5, workers=4))
    return insts, pv, se


# contracts

@pytest.mark.parametrize("args", [("rfr_caplet", (1.0,), 0.02, (0.5,)), ("rfr_caplet", (1.0, 0.5), 0.02, (0.5,)),
                                  ("rfr_caplet", (0.0, 1.0), 0.02, (1.0,)),
                                  ("rfr_caplet", (1.0, 1.5, 2.0), 0.02, (0.5, 0.5)),
                                  ("payer_swaption", (1.0, 1.5), 0.02, ()), ("cap", (1.0, 1.5), 0.02, (0.5,)),
                                  ("rfr_caplet", (1.0, 1.5), -3.0, (0.5,))])
def test_instrument_validation(args):
    with pytest.raises(ValueError):
        InstrumentSpec(*args)


def test_default_accrual_and_spread():
    c = InstrumentSpec.caplet(1.0, 1.25, 0.03)
    assert c.deltas == (0.25,)
    assert c.kappa == pytest.approx(1 / (1 + 0.03 * 0.25), rel=1e-15)
    assert strike_net_of_spread(0.03, 0.001) == pytest.approx(0.029)


# bonds and forwards

def test_bond_deterministic_reduction(hw):
    m = hw.replace(sigma=hw.sigma.constant(0.0))
    B = (1 - math.exp(-0.15 * 2)) / 0.15
    assert zcb_price(m, 0.003, 1.0, 3.0) == pytest.approx(D(2) * math.exp(-B * 0.003), rel=1e-10)


def test_bond_reprices_curve_and_rejects_bad_times(smile):
    assert zcb_price(smile, 0.0, 0.0, 5.0) == pytest.approx(D(5), rel=1e-12)
    assert zcb_price(smile, 0.01, 2.0, 2.0) == 1.0
    with pytest.raises(DomainError):
        zcb_price(smile, 0.0, 3.0, 2.0)
    with pytest.raises(DomainError):
        zcb_price(smile, 0.0, 0.0, 50.0)


def test_conditional_bond_against_oracle(smile):
    """Tower property: E[D(0,t) e^{-z_t} F^T(y_t, t)] = D(0,T)."""
    t, T = 0.5, 5.0
    ys = np.linspace(-0.06, 0.06, 41)
    table = np.array([zcb_price(smile, float(y), t, T) for y in ys])
    fit = np.polynomial.chebyshev.Chebyshev.fit(ys, np.log(table), 30)

    def payoff(y, z):
        return D(t) * np.exp(-z[0]) * np.exp(fit(np.clip(y[0], -0.06, 0.06)))

    mean, se = mc_estimate(smile, [t], payoff, McConfig(paths=200_000, seed=3, workers=4))
    assert abs(mean[0] - D(T)) <= 3 * se[0]


def test_bond_off_centre_against_oracle(smile):
    # conditional expectation at t is the bond price: regress e^{-(z_T - z_t)} on y_t
    t, T = 0.5, 5.0
    cfg = McConfig(paths=100_000, seed=8)
    ys = [-0.01, 0.0, 0.01]
    width = 0.002

    def payoff(y, z):
        w = np.exp(-(z[1] - z[0]))
        return np.array([np.where(np.abs(y[0] - c) < width, w, 0.0) for c in ys]
                        + [np.where(np.abs(y[0] - c) < width, 1.0, 0.0) for c in ys])

    mean, se = mc_estimate(smile, [t, T], payoff, cfg)
    for i, y in enumerate(ys):
        est = D(T) / D(t) * mean[i] / mean[i + 3]
        assert est == pytest.approx(zcb_price(smile, y, t, T), rel=3e-3)


def test_forward_deterministic_reduction():
    m = ModelParams.constant(0.0, 0.15, 1e-8, 0.0, horizon=4.0)
    assert forward_rate(m, 0.003, 1.0, 3.0) == pytest.approx(0.02 + math.exp(-0.3) * 0.003, rel=1e-12)


def test_forward_at_origin_is_curve_forward(smile):
    for T in (0.5, 3.0, 9.0):
        assert forward_rate(smile, 0.0, 0.0, T) == pytest.approx(0.02, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.02, 0.02), st.floats(0.0, 4.0), st.floats(0.1, 5.0))
def test_forward_is_log_bond_derivative(smile, y, t, tau):
    T = t + tau
    h = 1e-4
    fd = -(math.log(zcb_price(smile, y, t, T + h)) - math.log(zcb_price(smile, y, t, T - h))) / (2 * h)
    assert forward_rate(smile, y, t, T) == pytest.approx(fd, abs=1e-8)


def test_forward_slope_near_zero(smile):
    t, T = 1.0, 2.0
    st_ = kernel_stats(smile, t, T)
    ys = np.linspace(-2e-4, 2e-4, 9)
    slope = np.polyfit(ys, [forward_rate(smile, float(y), t, T) for y in ys], 1)[0]
    eps = 2500 * kernel_stats(smile, 0.0, T).sigma_rr
    assert slope == pytest.approx(st_.psi_r * st_.phi_r, rel=3 * eps)


# caplets

@pytest.mark.parametrize("K", [0.01, 0.02, 0.03])
@pytest.mark.parametrize("libor", [False, True])
def test_caplet_intrinsic_limit(tiny, K, libor):
    inst = InstrumentSpec.caplet(1.0, 1.5, K, libor=libor)
    assert price(tiny, inst).pv == pytest.approx(max(D(1) - D(1.5) / inst.kappa, 0.0), abs=1e-9)


def test_zero_sigma_is_exactly_intrinsic(deterministic):
    inst = InstrumentSpec.caplet(1.0, 1.5, 0.01)
    res = price_rfr_caplet(deterministic, inst)
    assert res.pv == D(1) - D(1.5) / inst.kappa and res.diagnostics["deterministic"]


def test_caplet_kind_checks(smile):
    with pytest.raises(ValueError):
        price_rfr_caplet(smile, InstrumentSpec.swaption([1, 1.5], 0.02))
    with pytest.raises(ValueError):
        price_swaption(smile, InstrumentSpec.caplet(1, 1.5, 0.02))


def test_caplets_against_oracle(mc_run, smile):
    insts, pv, se = mc_run
    for inst, p, s in zip(insts, pv, se):
        a = price(smile, inst).pv
        assert abs(a - p) <= max(3 * s, 1e-2 * p), (inst, a, p, s)


def test_term_rate_caplet_is_single_period_swaption(smile):
    for K in (0.015, 0.02, 0.025):
        lib = price_libor_caplet(smile, InstrumentSpec.caplet(1.0, 1.5, K, libor=True)).pv
        sw = price_swaption(smile, InstrumentSpec.swaption([1.0, 1.5], K)).pv
        assert lib == pytest.approx(sw, rel=1e-2)


# swaptions

def test_swaption_limits(tiny, smile):
    assert price_swaption(smile, InstrumentSpec.swaption([1, 1.5, 2], 1.0)).pv < 1e-15
    for K in (0.01, 0.03):
        s = InstrumentSpec.swaption([1, 1.5, 2], K)
        intrinsic = max(D(1) - D(2) - K * 0.5 * (D(1.5) + D(2)), 0.0)
        assert price_swaption(tiny, s).pv == pytest.approx(intrinsic, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.005, 0.04), st.floats(0.005, 0.04))
def test_swaption_decreasing_in_strike(smile, k1, k2):
    lo, hi = sorted((k1, k2))
    p = lambda k: price_swaption(smile, InstrumentSpec.swaption([2, 2.5, 3], k)).pv
    assert p(lo) >= p(hi) - 1e-15


# kernel cross-pricer

def test_kernel_unit_payoff_is_first_order_bond(smile):
    v = 3.0
    got = price_by_kernel_quadrature(smile, lambda e, z: np.ones_like(e), 0.0, v)
    assert got == pytest.approx(discount(smile.discount, 0, v) * (1 - f1_functional(smile, 0, 0, v)), rel=1e-12)


def test_kernel_caplet_agrees(smile):
    inst = InstrumentSpec.caplet(1.0, 1.5, 0.02)
    assert kernel_price_rfr_caplet(smile, inst) == pytest.approx(price_rfr_caplet(smile, inst).pv, rel=1e-2)


def test_kernel_rejects_degenerate_covariance(deterministic):
    with pytest.raises(DegenerateCovarianceError):
        price_by_kernel_quadrature(deterministic, lambda e, z: np.ones_like(e), 0.0, 2.0)
