"""Effective Hull-White variances and implied Hull-White (normal) volatilities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernelmath import _engine, y_star_arg
from .model import ModelParams
from .numerics import BracketError, QuadratureSpec, find_root, integrate, norm_cdf
from .pricing import InstrumentSpec, critical_y
from .termstructure import DomainError, PiecewiseCurve, discount

HW_GAMMA = 1e-8
VOL_BRACKET = (1e-6, 5.0)


class NegativeVarianceError(DomainError):
    """Adjustment so negative that the expansion has broken down."""


class SingularAdjustmentError(DomainError):
    """Swaption adjustment denominator vanishes: strike too far from the money."""


@dataclass
class EffectiveVariance:
    kind: str
    baseline: float
    adjustment: float
    coefficients: dict = field(default_factory=dict)
    moneyness: float = 0.0

    @property
    def total(self) -> float:
        return self.baseline + self.adjustment

    @property
    def eps_diagnostic(self) -> float:
        """max(|C2|, C3) / sqrt(baseline); an accuracy guide, not a bound."""
        c = self.coefficients
        if "C2" not in c:
            return float("nan")
        return max(abs(c["C2"]), c["C3"]) / math.sqrt(self.baseline)


def _caplet_coefficients(m, T1: float, T2: float, V: float, psi_fn, qspec):
    """C1, C2, C3 for the accrual period [T1, T2] given the Psi function."""
    eng = _engine(m, qspec)
    base = eng.table(0.0)
    tab1 = eng.table(T1)
    splits = m.breakpoints

    def parts(t1):
        Y = y_star_arg(m, t1, T2, qspec)
        return Y, base.psi(t1), m.gamma(t1), psi_fn(t1)

    def c1(t1):
        Y, p0, g, P = parts(t1)
        # psi(0,t1) cosh Y - psi(T1,t1) without cancellation near the Hull-White limit
        gap = np.expm1(0.5 * g * g * (base.sigma_rr(t1) - tab1.sigma_rr(t1)))
        return (tab1.psi(t1) * gap + 2.0 * p0 * np.sinh(0.5 * Y) ** 2) * P

    def c2(t1):
        Y, p0, g, P = parts(t1)
        return 0.5 * p0 * np.sinh(Y) * g * P * P

    def c3(t1):
        Y, p0, g, P = parts(t1)
        return p0 * np.cosh(Y) * g * g * P ** 3 / 6.0

    return tuple(float(integrate(f, T1, T2, splits, eng.spec)) for f in (c1, c2, c3))


def caplet_variance_terms(m, T1: float, T2: float, term_rate: bool = False,
                          qspec: QuadratureSpec | None = None):
    """(V, C1, C2, C3) for the period [T1, T2]; strike independent, so cached on ``m``."""
    key = ("caplet_terms", T1, T2, term_rate, qspec)
    return m._cached(key, lambda: _caplet_terms(m, T1, T2, term_rate, qspec))


def _caplet_terms(m, T1, T2, term_rate, qspec):
    m.check_time(T2)
    eng = _engine(m, qspec)
    base = eng.table(0.0)
    tab1 = eng.table(T1)
    b12 = float(tab1.b_star(T2))
    srr01 = float(base.sigma_rr(T1))
    V = b12 * b12 * srr01 + (0.0 if term_rate else float(tab1.sigma_zz(T2)))
    if V <= 0:
        raise DomainError("baseline variance is zero: no volatility before the fixing")
    sv = math.sqrt(V)

    def psi_c(t1):
        out = b12 * eng.phi(T1, t1) * srr01
        if not term_rate:
            out = out + tab1.sigma_rz(t1) + tab1.b_plus(t1, T2) * tab1.sigma_rr(t1)
        return out / sv

    return (V,) + _caplet_coefficients(m, T1, T2, V, psi_c, qspec)


def effective_variance_rfr(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None,
                           kind: str = "rfr_caplet") -> EffectiveVariance:
    V, c1, c2, c3 = caplet_variance_terms(m, inst.T1, inst.T2, kind == "libor_caplet", qspec)
    sv = math.sqrt(V)
    d = (-inst.delta_z_star(m.discount) + 0.5 * V) / sv - sv
    adj = 2.0 * sv * (c1 - c2 * d + c3 * (d * d - 1.0))
    _guard(V, adj)
    return EffectiveVariance(kind, V, adj, {"C1": c1, "C2": c2, "C3": c3}, d)


def effective_variance_libor(m, inst: InstrumentSpec,
                             qspec: QuadratureSpec | None = None) -> EffectiveVariance:
    """Term-rate version: no accrual variance, and Psi reduces to phi_r(T1, t1) sqrt(Sigma_rr(0, T1))."""
    return effective_variance_rfr(m, inst, qspec, kind="libor_caplet")


def effective_variance(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None) -> EffectiveVariance:
    if inst.kind == "rfr_caplet":
        return effective_variance_rfr(m, inst, qspec)
    if inst.kind == "libor_caplet":
        return effective_variance_libor(m, inst, qspec)
    return effective_variance_swaption(m, inst, qspec)


def _guard(V, adj):
    if adj < -0.9 * V:
        raise NegativeVarianceError(
            f"variance adjustment {adj:.3e} below -0.9 x baseline {V:.3e}; expansion invalid here")


def _swaption_inputs(m, inst: InstrumentSpec, qspec):
    T = np.asarray(inst.times, float)
    T0 = T[0]
    eng = _engine(m, qspec)
    base = eng.table(0.0)
    tab0 = eng.table(T0)
    S = float(base.sigma_rr(T0))
    B = np.array([float(tab0.b_star(x)) for x in T])
    D = np.array([float(m.discount(x)) for x in T])
    w = np.zeros(len(T))
    w[1:] = inst.strike * np.asarray(inst.deltas)
    w[-1] += 1.0
    return T, S, B, D, w, float(base.sigma_rz(T0))


def effective_variance_swaption(m, inst: InstrumentSpec,
                                qspec: QuadratureSpec | None = None) -> EffectiveVariance:
    """Swaption adjustment to Sigma_rr(0, T0).

    The matched expansion is cubic in the moneyness; the cubic term is
    dropped so the numerator keeps the quadratic D + E d + F (d^2 - 1) form.
    """
    if inst.kind != "payer_swaption":
        raise ValueError("not a swaption")
    T, S, B, D, w, rz0 = _swaption_inputs(m, inst, qspec)
    if S <= 0:
        raise DomainError("no volatility before expiry")
    sS = math.sqrt(S)
    yc = critical_y(m, inst, qspec)
    d = (-yc - rz0) / sS - B * sS
    dn = d[-1]
    delta = dn - d
    wd = w * D
    A = float(np.sum(wd[1:] * B[1:]))
    Bn = float(np.sum(wd[1:] * B[1:] * delta[1:]))
    T0 = T[0]
    eng = _engine(m, qspec)
    Dn = En = Fn = 0.0
    cbar = []
    for i in range(1, len(T)):
        c1, c2, c3 = _caplet_coefficients(m, T0, T[i], S, lambda t1: eng.phi(T0, t1) * sS, qspec)
        cbar.append((c1, c2, c3))
        # (a0 + a1 d + a2 d^2)(1 + dl d) without its d^3 term
        dl = delta[i]
        a0 = c1 + c2 * dl + c3 * (dl * dl - 1.0)
        a1 = -c2 - 2.0 * c3 * dl
        a2 = c3
        f = a2 + a1 * dl
        Fn += wd[i] * f
        En += wd[i] * (a1 + a0 * dl)
        Dn += wd[i] * (a0 + f)
    den = A + Bn * dn
    if abs(den) < 1e-8 * abs(A):
        raise SingularAdjustmentError(f"denominator A + B d = {den:.3e} vanishes at d = {dn:.3f}")
    adj = 2.0 * sS * (Dn + En * dn + Fn * (dn * dn - 1.0)) / den
    _guard(S, adj)
    return EffectiveVariance("payer_swaption", S, adj,
                             {"A": A, "B": Bn, "D": Dn, "E": En, "F": Fn, "y_c": yc,
                              "C_bar": cbar}, dn)


# Hull-White baseline formulas

def hw_caplet_price(D1: float, D2: float, kappa: float, delta_z_star: float, V: float) -> float:
    """D1 Phi(d1) - D2 Phi(d2) / kappa with d1 = (-dz* + V/2)/sqrt(V), d2 = d1 - sqrt(V)."""
    if not V > 0:
        raise DomainError("baseline price needs V > 0")
    sv = math.sqrt(V)
    d1 = (-delta_z_star + 0.5 * V) / sv
    return float(D1 * norm_cdf(d1) - D2 / kappa * norm_cdf(d1 - sv))


def hw_swaption_price(D, weights, x: float, B, V: float) -> float:
    """D0 Phi(d0) - sum w_i D_i Phi(d_i) with d_i = -x/sqrt(V) - B_i sqrt(V).

    ``x`` is y_c + Sigma_rz(0, T0); ``weights[0]`` is ignored.
    """
    if not V > 0:
        raise DomainError("baseline price needs V > 0")
    sv = math.sqrt(V)
    d = -x / sv - np.asarray(B) * sv
    D = np.asarray(D)
    return float(D[0] * norm_cdf(d[0]) - np.dot(np.asarray(weights)[1:] * D[1:], norm_cdf(d[1:])))


def hw_baseline_price(m, inst: InstrumentSpec, V: float, qspec: QuadratureSpec | None = None) -> float:
    """Baseline formula of ``inst`` with variance ``V`` and every other input from ``m``."""
    if inst.kind == "payer_swaption":
        T, S, B, D, w, rz0 = _swaption_inputs(m, inst, qspec)
        x = critical_y(m, inst, qspec) + rz0
        return hw_swaption_price(D, w, x, B, V)
    return hw_caplet_price(float(m.discount(inst.T1)), float(m.discount(inst.T2)), inst.kappa,
                           inst.delta_z_star(m.discount), V)


# implied Hull-White volatility

def hull_white_model(m, sigma: float = 1.0) -> ModelParams:
    """Constant-sigma model with the same alpha and curve in the Hull-White limit."""
    return ModelParams(PiecewiseCurve.constant(sigma), m.alpha, PiecewiseCurve.constant(HW_GAMMA),
                       PiecewiseCurve.constant(0.0), m.discount, horizon=m.horizon,
                       quadrature=m.quadrature)


@dataclass(frozen=True)
class _UnitHW:
    """Hull-White quantities at sigma = 1; every variance scales with sigma^2."""

    variance: float
    rz0: float = 0.0
    B: tuple = ()
    D: tuple = ()
    weights: tuple = ()
    fwd: tuple = ()


def _unit_hw(m, inst: InstrumentSpec, qspec) -> _UnitHW:
    key = ("unit_hw", inst)
    return m._cached(key, lambda: _build_unit_hw(m, inst, qspec))


def _build_unit_hw(m, inst, qspec):
    hw = hull_white_model(m)
    if inst.kind == "payer_swaption":
        T, S, B, D, w, rz0 = _swaption_inputs(hw, inst, qspec)
        fwd = tuple(float(discount(m.discount, T[0], x)) for x in T)
        return _UnitHW(S, rz0, tuple(B), tuple(D), tuple(w), fwd)
    eng = _engine(hw, qspec)
    b12 = float(eng.table(inst.T1).b_star(inst.T2))
    V = b12 * b12 * float(eng.table(0.0).sigma_rr(inst.T1))
    if inst.kind == "rfr_caplet":
        V += float(eng.table(inst.T1).sigma_zz(inst.T2))
    return _UnitHW(V)


def hw_price(m, inst: InstrumentSpec, sigma: float, qspec: QuadratureSpec | None = None) -> float:
    """Hull-White price at constant ``sigma`` with the alpha and curve of ``m``."""
    u = _unit_hw(m, inst, qspec)
    s2 = sigma * sigma
    if inst.kind != "payer_swaption":
        return hw_caplet_price(float(m.discount(inst.T1)), float(m.discount(inst.T2)), inst.kappa,
                               inst.delta_z_star(m.discount), s2 * u.variance)
    B = np.asarray(u.B)
    S = s2 * u.variance
    conv = 0.5 * B[1:] ** 2 * S
    w = np.asarray(u.weights)[1:]
    fwd = np.asarray(u.fwd)[1:]
    # swap value at T0 as a function of x = y + Sigma_rz(0, T0)
    g = lambda x: 1.0 - float(np.dot(w * fwd, np.exp(-B[1:] * x - conv)))
    sd = math.sqrt(S)
    lo, hi = -6.0 * sd, 6.0 * sd
    while g(lo) * g(hi) > 0:
        if hi - lo > 40.0 * sd + 1.0:
            raise BracketError("no critical level for the Hull-White swap")
        lo, hi = lo - 2.0 * sd - 1e-4, hi + 2.0 * sd + 1e-4
    x = find_root(g, lo, hi, tol=1e-15)
    return hw_swaption_price(u.D, u.weights, x, B, S)


def implied_vol_from_variance(m, inst: InstrumentSpec, V: float,
                              qspec: QuadratureSpec | None = None) -> float:
    """sigma_IV for a caplet whose baseline price uses variance ``V`` (exact: V scales as sigma^2)."""
    if inst.kind == "payer_swaption":
        raise ValueError("swaption implied vol needs a price inversion")
    if V < 0:
        raise NegativeVarianceError("negative effective variance")
    return math.sqrt(V / _unit_hw(m, inst, qspec).variance)


def implied_hw_vol(m, inst: InstrumentSpec, target_pv: float,
                   qspec: QuadratureSpec | None = None) -> float:
    """Constant sigma at which the Hull-White price equals ``target_pv``.

    Returns 0.0 when the target sits at the intrinsic (zero-vol) boundary.
    """
    lo, hi = VOL_BRACKET
    p_lo = hw_price(m, inst, lo, qspec)
    p_hi = hw_price(m, inst, hi, qspec)
    tol = 1e-13 * max(abs(p_lo), abs(target_pv), 1e-300)
    if abs(target_pv - p_lo) <= tol and target_pv <= p_lo + tol:
        return 0.0
    if not p_lo <= target_pv <= p_hi:
        raise BracketError(f"target {target_pv:.6e} outside attainable range "
                           f"[{p_lo:.6e}, {p_hi:.6e}] for sigma in [{lo}, {hi}]")
    return find_root(lambda s: hw_price(m, inst, s, qspec) - target_pv, lo, hi, tol=1e-15)


def model_implied_vol(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None) -> float:
    """sigma_IV of the effective-variance price of ``inst`` under ``m``."""
    ev = effective_variance(m, inst, qspec)
    if inst.kind == "payer_swaption":
        return implied_hw_vol(m, inst, hw_baseline_price(m, inst, ev.total, qspec), qspec)
    return implied_vol_from_variance(m, inst, ev.total, qspec)
