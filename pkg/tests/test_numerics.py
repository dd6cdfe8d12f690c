import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as sp_integrate, stats

from sinhrates.numerics import (BivariateGaussian, BracketError, PiecewiseLegendre, QuadratureError,
                                QuadratureSpec, bvn_pdf, cumulative_integral, find_root, integrate,
                                norm_cdf, norm_cdf_diff, norm_pdf, segment_edges)


def test_integrate_constant():
    assert integrate(lambda t: np.ones_like(t), 0.0, 3.0) == pytest.approx(3.0, rel=1e-15)


def test_integrate_exponential():
    exact = (1 - math.exp(-0.6)) / 0.3
    assert integrate(lambda t: np.exp(-0.3 * t), 0.0, 2.0) == pytest.approx(exact, rel=1e-14)


def test_integrate_empty_interval():
    assert integrate(np.exp, 1.5, 1.5) == 0.0


def test_integrate_step_function_with_split():
    f = lambda t: np.where(t < 1.3, 1.0, 3.0)
    assert integrate(f, 0.0, 2.0, splits=[1.3]) == pytest.approx(1.3 + 3 * 0.7, rel=1e-14)


def test_integrate_reports_failure():
    spec = QuadratureSpec(nodes=2, max_refinements=1, rel_tol=1e-15, max_segment=10.0)
    with pytest.raises(QuadratureError):
        integrate(lambda t: np.sin(40 * t) * np.exp(t), 0.0, 3.0, spec=spec)


@given(st.floats(-2.0, 2.0), st.floats(0.01, 5.0))
def test_integrate_polynomial(a, width):
    b = a + width
    exact = (b ** 6 - a ** 6) / 6 - (b ** 2 - a ** 2)
    assert integrate(lambda t: t ** 5 - 2 * t, a, b) == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_segment_edges_respect_splits_and_length():
    e = segment_edges(0.0, 2.0, [0.7, 3.0], 0.5)
    assert 0.7 in e and e[0] == 0.0 and e[-1] == 2.0
    assert np.all(np.diff(e) <= 0.5 + 1e-15)


def test_cumulative_integral_matches_closed_form():
    pts = np.array([0.3, 1.0, 2.2])
    out = cumulative_integral(np.cos, 0.0, pts)
    assert np.allclose(out, np.sin(pts), rtol=1e-13)


def test_piecewise_legendre_calculus():
    edges = segment_edges(0.0, 3.0, [], 0.5)
    p = PiecewiseLegendre.from_function(np.exp, edges, 16)
    x = np.linspace(0, 3, 17)
    assert np.allclose(p(x), np.exp(x), rtol=1e-14)
    assert np.allclose(p.antiderivative()(x), np.expm1(x), rtol=1e-13, atol=1e-15)
    assert np.allclose(p.derivative()(x), np.exp(x), rtol=1e-11)


@pytest.mark.parametrize("g, lo, hi, root", [
    (lambda x: x - 1, 0.0, 2.0, 1.0),
    (lambda x: float(norm_cdf(x)) - 0.5, -3.0, 3.0, 0.0),
    (lambda x: math.exp(x) - 2, 0.0, 1.0, math.log(2)),
])
def test_find_root(g, lo, hi, root):
    assert find_root(g, lo, hi, tol=1e-14) == pytest.approx(root, abs=1e-12)


def test_find_root_without_bracket():
    with pytest.raises(BracketError):
        find_root(lambda x: x * x + 1, -1.0, 1.0)


def test_normal_functions():
    assert norm_cdf(0.0) == 0.5
    assert norm_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    assert bvn_pdf(0.0, 0.0, BivariateGaussian(1.0, 0.0, 1.0)) == pytest.approx(1 / (2 * math.pi), rel=1e-15)


@given(st.floats(-8, 8), st.floats(0, 8))
def test_cdf_difference_is_accurate_in_tails(a, w):
    b = a + w
    expected = sp_integrate.quad(stats.norm.pdf, a, b, epsabs=0, epsrel=1e-13)[0]
    assert norm_cdf_diff(a, b) == pytest.approx(expected, rel=1e-12, abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-0.9, 0.9), st.floats(0.1, 3.0))
def test_bvn_pdf_normalised(su, rho, sw):
    cov = BivariateGaussian(su * su, rho * su * sw, sw * sw)
    total, _ = sp_integrate.dblquad(lambda w, u: bvn_pdf(u, w, cov), -10 * su, 10 * su, -10 * sw, 10 * sw,
                                    epsabs=1e-10)
    assert total == pytest.approx(1.0, abs=1e-7)


def test_bvn_rejects_indefinite():
    with pytest.raises(ValueError):
        BivariateGaussian(1.0, 2.0, 1.0)
