"""Closed-form prices: bonds, forward rates, RFR and term-rate caplets, payer swaptions.

All option formulas are evaluated at the origin (t = 0, y = 0). The first
order operator inside the option formulas acts on functions of (y, z)
through shifts of their arguments; here each such function is a normal CDF
of an affine argument (times an exponential in y before the fixing), so
the shifted values are written out explicitly and only a scalar integral
over t1 remains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .drift import f1_functional, f2_functional, g1_integrand
from .kernelmath import (_engine, caplet_shift, g1_multiplier, price_by_kernel,
                         skew_argument)
from .numerics import BracketError, QuadratureSpec, find_root, integrate, norm_cdf, norm_cdf_spread, norm_pdf
from .termstructure import DomainError, discount, instantaneous_forward

KINDS = ("rfr_caplet", "libor_caplet", "payer_swaption")
DETERMINISTIC_VARIANCE = 1e-20


@dataclass(frozen=True)
class InstrumentSpec:
    """Contract terms.

    ``times`` is (T1, T2) for caplets and the schedule (T0, ..., Tn) for a
    swaption; ``deltas`` holds one accrual fraction per period.
    """

    kind: str
    times: tuple[float, ...]
    strike: float
    deltas: tuple[float, ...]
    id: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown instrument kind {self.kind!r}")
        t = np.asarray(self.times, float)
        if len(t) < 2 or np.any(np.diff(t) <= 0) or t[0] <= 0:
            raise ValueError("instrument times must be positive and strictly ascending")
        if self.kind != "payer_swaption" and len(t) != 2:
            raise ValueError("a caplet needs exactly (T1, T2)")
        if len(self.deltas) != len(t) - 1 or any(d <= 0 for d in self.deltas):
            raise ValueError("need one positive accrual fraction per period")
        if self.kind != "payer_swaption" and not 1.0 + self.strike * self.deltas[0] > 0:
            raise ValueError("strike too negative: 1 + K delta must be positive")

    @classmethod
    def caplet(cls, T1: float, T2: float, strike: float, libor: bool = False,
               delta: float | None = None, id: str = "") -> "InstrumentSpec":
        """Caplet on [T1, T2]; the accrual fraction defaults to T2 - T1 (ACT/365F times)."""
        return cls("libor_caplet" if libor else "rfr_caplet", (float(T1), float(T2)), float(strike),
                   (float(T2 - T1) if delta is None else float(delta),), id)

    @classmethod
    def swaption(cls, schedule: Sequence[float], strike: float,
                 deltas: Sequence[float] | None = None, id: str = "") -> "InstrumentSpec":
        sched = tuple(float(x) for x in schedule)
        if deltas is None:
            deltas = tuple(np.diff(sched))
        return cls("payer_swaption", sched, float(strike), tuple(float(d) for d in deltas), id)

    @property
    def T1(self) -> float:
        return self.times[0]

    @property
    def T2(self) -> float:
        return self.times[-1]

    @property
    def kappa(self) -> float:
        return 1.0 / (1.0 + self.strike * self.deltas[0])

    def delta_z_star(self, dc) -> float:
        """ln(D(T1, T2) / kappa)."""
        return math.log(discount(dc, self.T1, self.T2) / self.kappa)


@dataclass
class PriceResult:
    pv: float
    order0: float
    order1: float
    diagnostics: dict = field(default_factory=dict)


def strike_net_of_spread(strike: float, spread: float) -> float:
    """Strike to use when the underlying pays a deterministic spread over the modelled rate."""
    return strike - spread


# bonds and forwards

def zcb_price(m, y: float, t: float, T: float, spec: QuadratureSpec | None = None,
              order: int = 2) -> float:
    """Bond price F^T(y, t); ``order=1`` drops the second-order functional."""
    if t > T:
        raise DomainError("zcb_price needs t <= T")
    m.check_time(T)
    if t == T:
        return 1.0
    tab = _engine(m, spec).table(t)
    base = _engine(m, spec).table(0.0)
    bs = float(tab.b_star(T))
    mu = bs * (y + float(base.sigma_rz(t))) + 0.5 * bs * bs * float(base.sigma_rr(t))
    f1 = f1_functional(m, y, t, T, spec)
    bracket = 1.0 - f1
    if order >= 2:
        bracket += f2_functional(m, t, T, spec, y=y, f1=f1)
    return discount(m.discount, t, T) * math.exp(-mu) * bracket


def forward_rate(m, y: float, t: float, T: float, spec: QuadratureSpec | None = None,
                 order: int = 2) -> float:
    """Instantaneous forward rate -d/dT ln F^T(y, t), differentiated analytically."""
    if t > T:
        raise DomainError("forward_rate needs t <= T")
    m.check_time(T)
    eng = _engine(m, spec)
    tab = eng.table(t)
    base = eng.table(0.0)
    rbar = instantaneous_forward(m.discount, T)
    bs = float(tab.b_star(T))
    dmu = float(tab.psi(T) * tab.phi(T)) * (y + float(base.sigma_rz(t)) + bs * float(base.sigma_rr(t)))
    if t == T:
        return float(rbar + dmu + g1_integrand(m, y, t, np.array([T]), T, spec)[0])
    dbplus_coeff = float(tab.psi(T))

    def d_g1(t1):
        arg = skew_argument(m, y, t, t1, T, spec)
        return (tab.psi(t1) * tab.sigma_rr(t1) * dbplus_coeff * eng.phi(t1, T)
                * -2.0 * np.sinh(0.5 * arg) ** 2)

    df1 = float(g1_integrand(m, y, t, np.array([T]), T, spec)[0])
    df1 += float(integrate(d_g1, t, T, m.breakpoints, eng.spec))
    f1 = f1_functional(m, y, t, T, spec)
    if order < 2:
        return float(rbar + dmu + df1 / (1.0 - f1))
    f2 = f2_functional(m, t, T, spec, y=y, f1=f1)
    df2 = f1 * df1 - float(m.drift.r2(T))
    return float(rbar + dmu + (df1 - df2) / (1.0 - f1 + f2))


# the first-order operator on shifted normal CDFs

def _operator_on_cdf(m, t1, v, d0, shift_d, expo_shift=None, spec=None):
    """First-order operator at t1 applied to x -> e^{-s x} Phi(d0 + x), evaluated at x = 0.

    The shift operators move x by +/- ``shift_d`` (and the exponent by
    +/- ``expo_shift`` when given). Returns an array over t1.
    """
    t1 = np.asarray(t1, dtype=float)
    g = m.gamma(t1)
    psi = _engine(m, spec).table(0.0).psi(t1)
    Y = skew_argument(m, 0.0, 0.0, t1, v, spec)
    if expo_shift is not None:
        Y = Y - expo_shift
    up = d0 + shift_d
    dn = d0 - shift_d
    f_sum = norm_cdf(up) + norm_cdf(dn)
    f_diff = norm_cdf_spread(d0, shift_d)
    shifted = psi / g * (np.sinh(Y) * 0.5 * f_sum + np.cosh(Y) * 0.5 * f_diff)
    return shifted + g1_multiplier(m, 0.0, 0.0, t1, v, spec) * norm_cdf(d0)


PV_FLOOR = 1e-12  # per unit notional; first-order terms below rel_tol * this are invisible


def _integral(f, a, b, splits, spec, pv_scale):
    """Integral of a first-order term; converged once it is accurate relative to ``pv_scale``."""
    floor = spec.rel_tol * (abs(pv_scale) + PV_FLOOR)
    return float(integrate(f, a, b, splits, replace(spec, abs_tol=max(spec.abs_tol, floor))))


def price_rfr_caplet(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None) -> PriceResult:
    """Compounded-rate caplet paying [exp(int r) - 1 - K delta]^+ at T2."""
    if inst.kind == "payer_swaption":
        raise ValueError("not a caplet")
    return _caplet(m, inst, qspec, term_rate=False)


def _caplet(m, inst: InstrumentSpec, qspec, term_rate: bool) -> PriceResult:
    # term_rate drops the z noise accrued after T1: the payoff is then a function of y(T1) only
    T1, T2 = inst.T1, inst.T2
    m.check_time(T2)
    eng = _engine(m, qspec)
    base = eng.table(0.0)
    tab1 = eng.table(T1)
    kappa = inst.kappa
    D1 = float(m.discount(T1))
    D2 = float(m.discount(T2))
    b12 = float(tab1.b_star(T2))
    phi01 = float(base.phi(T1))
    srr01 = float(base.sigma_rr(T1))
    V = b12 * b12 * srr01 + (0.0 if term_rate else float(tab1.sigma_zz(T2)))
    dzs = inst.delta_z_star(m.discount)
    if V < DETERMINISTIC_VARIANCE:
        pv = max(D1 - D2 / kappa, 0.0)
        return PriceResult(pv, pv, 0.0, {"V": V, "deterministic": True})
    sv = math.sqrt(V)
    d1 = (-dzs + 0.5 * V) / sv
    d2 = d1 - sv
    splits = np.union1d(m.breakpoints, [T1])
    scale = b12 * phi01

    def term1(t1):
        sh = caplet_shift(m, t1, T1, T2, qspec)
        s = sh.gamma_t1 * scale * sh.delta_y
        return _operator_on_cdf(m, t1, T1, d1, s / sv, spec=qspec)

    def term2(t1):
        sh = caplet_shift(m, t1, T1, None if term_rate else T2, qspec)
        s = sh.gamma_t1 * scale * sh.delta_y
        before = t1 < T1
        shift = (s + sh.gamma_t1 * sh.delta_z) / sv
        return _operator_on_cdf(m, t1, T2, d2, shift, np.where(before, s, 0.0), spec=qspec)

    order0 = D1 * float(norm_cdf(d1)) - D2 / kappa * float(norm_cdf(d2))
    i1 = _integral(term1, 0.0, T1, splits, eng.spec, order0 / D1)
    i2 = _integral(term2, 0.0, T2, splits, eng.spec, order0 * kappa / D2)
    rz01 = float(base.sigma_rz(T1))
    order1 = (-D1 * i1 + D2 / kappa * (i2 + b12 * rz01 * float(norm_cdf(d2)))
              - D2 / kappa * sv * float(norm_pdf(d2)))
    return PriceResult(order0 + order1, order0, order1,
                       {"V": V, "d1": d1, "d2": d2, "delta_z_star": dzs, "int_t1": i1, "int_t2": i2})


def price_libor_caplet(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None) -> PriceResult:
    """Term-rate caplet paying [1/F^{T2}(y(T1), T1) - 1/kappa]^+ at T2.

    Same construction as the compounded caplet with no rate variance
    accruing inside [T1, T2]: the accrual variance Sigma_zz(T1,T2) and the z
    displacements beyond T1 vanish, while bond sensitivities keep the full model.
    """
    if inst.kind == "payer_swaption":
        raise ValueError("not a caplet")
    return _caplet(m, inst, qspec, term_rate=True)


def price_caplet(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None) -> PriceResult:
    if inst.kind == "libor_caplet":
        return price_libor_caplet(m, inst, qspec)
    return price_rfr_caplet(m, inst, qspec)


# swaptions

def swap_value(m, y: float, inst: InstrumentSpec, spec: QuadratureSpec | None = None,
               order: int = 1) -> float:
    """Payer swap value at T0 per unit notional: 1 - F^{Tn} - K sum delta_i F^{Ti}."""
    T0 = inst.times[0]
    bonds = [zcb_price(m, y, T0, T, spec, order) for T in inst.times[1:]]
    return 1.0 - bonds[-1] - inst.strike * float(np.dot(inst.deltas, bonds))


def critical_y(m, inst: InstrumentSpec, spec: QuadratureSpec | None = None) -> float:
    """Level of y at T0 above which the payer swap is in the money (first-order bonds)."""
    T0 = inst.times[0]
    sd = math.sqrt(float(_engine(m, spec).table(0.0).sigma_rr(T0)))
    sd = max(sd, 1e-6)
    g = lambda y: swap_value(m, y, inst, spec)
    width = 6.0
    while True:
        lo, hi = -width * sd, width * sd
        glo, ghi = g(lo), g(hi)
        if glo * ghi <= 0:
            return find_root(g, lo, hi, tol=1e-14 * max(1.0, sd))
        if width >= 20.0:
            raise BracketError(f"no critical y within +/-20 sd (swap values {glo:.3e}, {ghi:.3e})")
        width = min(20.0, width * 1.5)


def price_swaption(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None) -> PriceResult:
    """Payer swaption exercised at T0 into the swap over T0 < T1 < ... < Tn."""
    if inst.kind != "payer_swaption":
        raise ValueError("not a swaption")
    T = np.asarray(inst.times, float)
    T0 = T[0]
    m.check_time(T[-1])
    eng = _engine(m, qspec)
    base = eng.table(0.0)
    tab0 = eng.table(T0)
    S = float(base.sigma_rr(T0))
    D = np.array([float(m.discount(x)) for x in T])
    weights = np.zeros(len(T))
    weights[1:] = inst.strike * np.asarray(inst.deltas)
    weights[-1] += 1.0
    if S < DETERMINISTIC_VARIANCE:
        pv = D[0] * max(swap_value(m, 0.0, inst, qspec), 0.0)
        return PriceResult(pv, pv, 0.0, {"sigma_rr": S, "deterministic": True})
    sS = math.sqrt(S)
    try:
        yc = critical_y(m, inst, qspec)
    except BracketError:
        # the swap keeps one sign over +/-20 sd: exercise is (almost) certain or never happens
        if swap_value(m, 0.0, inst, qspec) > 0:
            pv = D[0] - float(np.dot(weights, D))
        else:
            pv = 0.0
        return PriceResult(pv, pv, 0.0, {"sigma_rr": S, "no_crossing": True})
    rz0 = float(base.sigma_rz(T0))
    phi00 = float(base.phi(T0))
    B = np.array([float(tab0.b_star(x)) for x in T])
    d = (-yc - rz0) / sS - B * sS
    splits = np.union1d(m.breakpoints, [T0])

    def dy_shift(t1):
        sh = caplet_shift(m, t1, T0, None, qspec)
        return sh.gamma_t1 * phi00 * sh.delta_y

    def term0(t1):
        return _operator_on_cdf(m, t1, T0, d[0], dy_shift(t1) / sS, spec=qspec)

    order0 = D[0] * float(norm_cdf(d[0])) - float(np.dot(weights * D, norm_cdf(d)))
    order1 = -D[0] * _integral(term0, 0.0, T0, splits, eng.spec, order0 / D[0])
    ints = [0.0]
    for i in range(1, len(T)):
        Ti, Bi, di = T[i], B[i], d[i]

        def term_i(t1, Ti=Ti, Bi=Bi, di=di):
            s = dy_shift(t1)
            return _operator_on_cdf(m, t1, Ti, di, s / sS, np.where(t1 < T0, Bi * s, 0.0), spec=qspec)

        ii = _integral(term_i, 0.0, Ti, splits, eng.spec, order0 / (weights[i] * D[i]))
        ints.append(ii)
        corr = -ii - Bi * rz0 * float(norm_cdf(di))
        order1 -= weights[i] * D[i] * (corr + Bi * sS * float(norm_pdf(di)))
    return PriceResult(order0 + order1, order0, order1,
                       {"y_c": yc, "sigma_rr": S, "d": d.tolist(), "int_t1": ints})


def price(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None) -> PriceResult:
    if inst.kind == "payer_swaption":
        return price_swaption(m, inst, qspec)
    return price_caplet(m, inst, qspec)


# kernel cross-pricer

def price_by_kernel_quadrature(m, payoff: Callable, t: float, v: float,
                               qspec: QuadratureSpec | None = None, y: float = 0.0, z: float = 0.0,
                               kink: tuple[str, float] | None = None) -> float:
    """Value at (y, z, t) of ``payoff(eta, zeta)`` paid at v, by 2-D quadrature of G0 + G1."""
    return price_by_kernel(m, payoff, t, v, y, z, qspec, kink)[0]


def kernel_price_rfr_caplet(m, inst: InstrumentSpec, qspec: QuadratureSpec | None = None,
                            y_points: int = 41) -> float:
    """RFR caplet through the kernel in two stages.

    Stage one values the payoff at T1 on a Chebyshev grid of y; stage two
    prices that T1 value from time 0.
    """
    T1, T2 = inst.T1, inst.T2
    D12 = discount(m.discount, T1, T2)
    inv_k = 1.0 / inst.kappa
    kink = math.log(D12 * inv_k)

    def stage1(eta, zeta):
        return np.maximum(np.exp(zeta) / D12 - inv_k, 0.0)

    sd = math.sqrt(float(_engine(m, qspec).table(0.0).sigma_rr(T1)))
    half = 8.0 * sd
    k = np.arange(y_points)
    ys = half * np.cos(np.pi * (k + 0.5) / y_points)
    vals = np.array([price_by_kernel(m, stage1, T1, T2, yy, 0.0, qspec, ("zeta", kink))[0] for yy in ys])
    cheb = np.polynomial.chebyshev.Chebyshev.fit(ys, vals, y_points - 1, domain=[-half, half])

    def stage2(eta, zeta):
        return cheb(np.clip(eta, -half, half))

    return price_by_kernel(m, stage2, 0.0, T1, 0.0, 0.0, qspec)[0]
