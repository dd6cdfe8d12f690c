import numpy as np
import pytest

from sinhrates import DiscountCurve, ModelParams, PiecewiseCurve
from sinhrates.marketcal import (GAMMA_BOUNDS, Quote, QuoteSurface, UnderdeterminedError, calibrate,
                                 repriced_vols, synthetic_quotes)
from sinhrates.termstructure import DomainError, InputFormatError

STRIKES = [0.01, 0.015, 0.02, 0.025, 0.03]
DC = DiscountCurve.flat(0.02)


def piecewise_model(times, sigma, gamma, gamma_ystar, horizon):
    pts = [0.0] + list(times[:-1])
    return ModelParams(PiecewiseCurve.from_pairs(pts, sigma), PiecewiseCurve.constant(0.15),
                       PiecewiseCurve.from_pairs(pts, gamma),
                       PiecewiseCurve.from_pairs(pts, np.array(gamma_ystar) / np.array(gamma)), DC,
                       horizon=horizon)


@pytest.fixture(scope="module")
def round_trip():
    mats = [1.5, 3.0, 5.0]
    m = ModelParams.constant(0.01, 0.15, 80.0, 0.3 / 80.0, horizon=5.0)
    q = synthetic_quotes(m, mats, STRIKES)
    return m, q, calibrate(q, DC)


def test_round_trip_recovers_constant_curves(round_trip):
    m, q, rep = round_trip
    assert rep.converged
    assert np.allclose(rep.sigma.values, 0.01, rtol=1e-6, atol=0)
    assert np.allclose(rep.gamma.values, 80.0, rtol=1e-6, atol=0)
    assert np.allclose(rep.y_star.values, 0.3 / 80.0, rtol=1e-6, atol=0)
    vols = np.array([x.implied_vol for x in q.quotes])
    assert np.max(np.abs(repriced_vols(rep, q) - vols)) < 1e-8


def test_time_dependent_curves_in_plausible_band():
    mats = [1.5, 3.0, 6.0, 10.0]
    m = piecewise_model(mats, [0.002, 0.0025, 0.004, 0.006], [300, 150, 80, 40], [0.5, 0.3, 0.15, 0.08], 10.0)
    rep = calibrate(synthetic_quotes(m, mats, STRIKES), DC)
    assert rep.converged
    assert np.allclose(rep.gamma.values, [300, 150, 80, 40], rtol=1e-6)
    assert np.all((rep.gamma.values >= 20) & (rep.gamma.values <= 500))
    gy = rep.gamma.values * rep.y_star.values
    assert np.all((gy >= 0.02) & (gy <= 1.0))
    assert np.allclose(rep.gamma.breakpoints, [0.0, 1.5, 3.0, 6.0])


def test_flat_smile_drives_gamma_to_its_floor():
    q = QuoteSurface([Quote(T, 0.5, K, 0.01) for T in (1.5, 3.0) for K in STRIKES])
    rep = calibrate(q, DC)
    assert np.allclose(rep.gamma.values, GAMMA_BOUNDS[0])
    assert np.all(np.abs(rep.gamma.values * rep.y_star.values) < 1e-3)
    assert rep.max_abs_residual() < 1e-7


def test_term_rate_quotes_round_trip():
    m = ModelParams.constant(0.01, 0.15, 60.0, 0.2 / 60.0, horizon=3.0)
    q = synthetic_quotes(m, [1.5, 3.0], STRIKES, libor=True)
    rep = calibrate(q, DC, libor=True)
    assert np.allclose(rep.gamma.values, 60.0, rtol=1e-6) and rep.libor


def test_needs_three_strikes():
    q = QuoteSurface([Quote(2.0, 0.5, K, 0.01) for K in (0.01, 0.02)])
    with pytest.raises(UnderdeterminedError):
        calibrate(q, DC)


def test_quote_validation():
    with pytest.raises(DomainError):
        QuoteSurface([Quote(1.0, 1.0, 0.02, 0.01)])
    with pytest.raises(DomainError):
        QuoteSurface([Quote(2.0, 0.5, 0.02, -0.01)])
    with pytest.raises(DomainError):
        calibrate(QuoteSurface([Quote(2.0, 0.5, k, 0.01) for k in STRIKES]), DC, alpha=0.0)


def test_quote_csv_round_trip(tmp_path, round_trip):
    _, q, _ = round_trip
    q.to_csv(tmp_path / "q.csv")
    back = QuoteSurface.from_csv(tmp_path / "q.csv")
    assert back.quotes == q.quotes
    (tmp_path / "bad.csv").write_text("maturity,tenor,strike,implied_vol\n2,0.5,0.02,x\n")
    with pytest.raises(InputFormatError, match=":2"):
        QuoteSurface.from_csv(tmp_path / "bad.csv")


def test_report_files(tmp_path, round_trip):
    _, _, rep = round_trip
    paths = rep.write(tmp_path)
    names = sorted(p.name for p in paths)
    assert names == sorted(["sigma.csv", "alpha.csv", "gamma.csv", "y_star.csv", "discount.csv",
                            "residuals.csv", "buckets.csv"])
    from sinhrates import load_model
    back = load_model(tmp_path)
    assert np.array_equal(back.gamma.values, rep.gamma.values)
