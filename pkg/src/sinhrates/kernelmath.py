"""Convolution integrals of the sinh short-rate kernel and its first-order correction.

Notation: A(t) is the integral of alpha from 0, so phi_r(t, v) = exp(A(t) - A(v)).
Every quantity with a lower limit ``t`` is served from a per-start table
(``StartTable``) that samples the integrands on a Gauss-Legendre grid split at
all parameter breakpoints and keeps the running integrals as piecewise
Legendre series. Sigma_rr, phi_r and psi_r have closed forms and are never
interpolated.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import (DegenerateCovarianceError, PiecewiseLegendre, QuadratureSpec,
                       composite_nodes, expm1_ratio, fixed_integrate, gauss_legendre,
                       segment_edges)
from .termstructure import DomainError, discount


class KernelEngine:
    """Closed-form pieces plus a cache of ``StartTable`` objects for one model."""

    def __init__(self, model, spec: QuadratureSpec | None = None):
        self.model = model
        self.spec = spec or model.quadrature
        sig, alp = model.sigma, model.alpha
        bp = np.union1d(sig.breakpoints, alp.breakpoints)
        self._pieces_lo = bp
        self._pieces_hi = np.append(bp[1:], np.inf)
        self._sig2 = sig(bp) ** 2
        self._alp = alp(bp)
        # A(t) at the alpha breakpoints
        abp = alp.breakpoints
        self._a_bp = abp
        self._a_val = np.concatenate([[0.0], np.cumsum(alp.values[:-1] * np.diff(abp))])
        self._tables: dict[float, StartTable] = {}
        self._lock = threading.Lock()

    def A(self, t):
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self._a_bp, t, side="right") - 1
        return self._a_val[i] + self.model.alpha.values[i] * (t - self._a_bp[i])

    def phi(self, t, v):
        return np.exp(self.A(t) - self.A(v))

    def sigma_rr(self, t, v):
        """Sigma_rr(t, v), summed exactly over the pieces of sigma and alpha."""
        t, v = np.broadcast_arrays(np.asarray(t, float), np.asarray(v, float))
        av = self.A(v)
        out = np.zeros(t.shape)
        for lo, hi, s2, a in zip(self._pieces_lo, self._pieces_hi, self._sig2, self._alp):
            if s2 == 0.0:
                continue
            left = np.maximum(lo, t)
            right = np.minimum(hi, v)
            width = np.maximum(right - left, 0.0)
            if not np.any(width > 0):
                continue
            decay = np.exp(-2.0 * (av - self.A(np.where(width > 0, right, v))))
            out += np.where(width > 0, s2 * decay * width * expm1_ratio(2.0 * a * width), 0.0)
        return out

    def psi(self, t, v):
        g = self.model.gamma(v)
        return np.exp(0.5 * g * g * self.sigma_rr(t, v))

    def table(self, t0: float) -> "StartTable":
        t0 = float(t0)
        with self._lock:
            tab = self._tables.get(t0)
            if tab is None:
                tab = StartTable(self, t0)
                self._tables[t0] = tab
            return tab


class StartTable:
    """Kernel integrals with lower limit ``t0`` as functions of the upper limit."""

    def __init__(self, engine: KernelEngine, t0: float):
        m = engine.model
        spec = engine.spec
        self.engine = engine
        self.t0 = t0
        end = max(m.horizon, t0 + spec.max_segment)
        self.edges = segment_edges(t0, end, m.breakpoints, spec.max_segment)
        x = PiecewiseLegendre.nodes(self.edges, spec.nodes)
        da = engine.A(x) - engine.A(t0)
        srr = engine.sigma_rr(t0, x)
        g = m.gamma(x)
        psi = np.exp(0.5 * g * g * srr)
        self._rz = PiecewiseLegendre.from_node_values(self.edges, psi * np.exp(da) * srr).antiderivative()
        self._bstar = PiecewiseLegendre.from_node_values(self.edges, psi * np.exp(-da)).antiderivative()
        rz_nodes = np.exp(-da) * self._rz(x)
        self._zz = PiecewiseLegendre.from_node_values(self.edges, 2.0 * psi * rz_nodes).antiderivative()

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v < self.t0 - 1e-14):
            raise DomainError(f"upper limit below start {self.t0}")
        return np.maximum(v, self.t0)

    def _dA(self, v):
        return self.engine.A(v) - self.engine.A(self.t0)

    def phi(self, v):
        return np.exp(-self._dA(self._check(v)))

    def sigma_rr(self, v):
        return self.engine.sigma_rr(self.t0, self._check(v))

    def psi(self, v):
        return self.engine.psi(self.t0, self._check(v))

    def sigma_rz(self, v):
        v = self._check(v)
        return np.exp(-self._dA(v)) * self._rz(v)

    def b_star(self, v):
        return self._bstar(self._check(v))

    def sigma_zz(self, v):
        return self._zz(self._check(v))

    def b_plus(self, t1, v):
        """B+(t0, t1, v) as the integral of psi_r(t0, u) phi_r(t1, u) over [t1, v]."""
        t1 = self._check(t1)
        v = self._check(v)
        if np.any(t1 > v):
            raise DomainError("b_plus needs t1 <= v")
        return np.exp(self._dA(t1)) * (self._bstar(v) - self._bstar(t1))


def _engine(m, spec: QuadratureSpec | None) -> KernelEngine:
    if spec is None or spec == m.quadrature:
        return m.kernel
    return m._cached(("kernel", spec), lambda: KernelEngine(m, spec))


@dataclass(frozen=True)
class KernelStats:
    """Kernel quantities for one (t, v) pair."""

    t: float
    v: float
    phi_r: float
    sigma_rr: float
    psi_r: float
    sigma_rz: float
    sigma_zz: float
    b_star: float
    sigma_rz_0t: float
    sigma_rr_0t: float

    def mu_star(self, y):
        """B*(t,v) (y + Sigma_rz(0,t)) + B*(t,v)^2 Sigma_rr(0,t) / 2."""
        return self.b_star * (np.asarray(y) + self.sigma_rz_0t) + 0.5 * self.b_star ** 2 * self.sigma_rr_0t

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.sigma_rr, self.sigma_rz], [self.sigma_rz, self.sigma_zz]])


def kernel_stats(m, t: float, v: float, spec: QuadratureSpec | None = None) -> KernelStats:
    if not 0 <= t <= v:
        raise DomainError(f"kernel_stats needs 0 <= t <= v, got t={t}, v={v}")
    m.check_time(v)
    eng = _engine(m, spec)
    tab = eng.table(t)
    base = eng.table(0.0)
    return KernelStats(t=t, v=v, phi_r=float(tab.phi(v)), sigma_rr=float(tab.sigma_rr(v)),
                       psi_r=float(tab.psi(v)), sigma_rz=float(tab.sigma_rz(v)),
                       sigma_zz=float(tab.sigma_zz(v)), b_star=float(tab.b_star(v)),
                       sigma_rz_0t=float(base.sigma_rz(t)), sigma_rr_0t=float(base.sigma_rr(t)))


def b_plus(m, t: float, t1, v, spec: QuadratureSpec | None = None):
    if np.any(np.asarray(t1) < t) or np.any(np.asarray(t1) > np.asarray(v)):
        raise DomainError("b_plus needs t <= t1 <= v")
    out = _engine(m, spec).table(t).b_plus(t1, v)
    return float(out) if np.ndim(out) == 0 else out


def y_star_arg(m, t1, t: float, spec: QuadratureSpec | None = None):
    """Y*(t1, t) = gamma(t1) (y*(t1) - B+(0,t1,t) Sigma_rr(0,t1) - Sigma_rz(0,t1))."""
    t1 = np.asarray(t1, dtype=float)
    if np.any(t1 < 0) or np.any(t1 > t):
        raise DomainError("y_star_arg needs 0 <= t1 <= t")
    base = _engine(m, spec).table(0.0)
    out = m.gamma(t1) * (m.y_star(t1) - base.b_plus(t1, t) * base.sigma_rr(t1) - base.sigma_rz(t1))
    return float(out) if out.ndim == 0 else out


def skew_argument(m, y, t: float, t1, v, spec: QuadratureSpec | None = None):
    """gamma(t1)(phi_r(t,t1) y + y*(t1) - B+(t,t1,v) Sigma_rr(t,t1) - Sigma_rz(t,t1))."""
    tab = _engine(m, spec).table(t)
    return m.gamma(t1) * (tab.phi(t1) * y + m.y_star(t1) - tab.b_plus(t1, v) * tab.sigma_rr(t1)
                          - tab.sigma_rz(t1))


def r1_plus_minus(m, y, t: float, t1, v, spec: QuadratureSpec | None = None):
    """The pair (R1+, R1-) of shifted-rate coefficients."""
    t1 = np.asarray(t1, dtype=float)
    if np.any(t1 < t) or np.any(t1 > np.asarray(v)):
        raise DomainError("r1_plus_minus needs t <= t1 <= v")
    g = m.gamma(t1)
    if np.any(g <= 0):
        raise DomainError("gamma(t1) must be positive")
    arg = skew_argument(m, y, t, t1, v, spec)
    pref = _engine(m, spec).table(t).psi(t1) / (2.0 * g)
    return pref * np.exp(arg), pref * np.exp(-arg)


@dataclass(frozen=True)
class ShiftDisplacement:
    """Arguments of the shift operators: (y, z) -> (y +/- gamma dy, z +/- gamma dz)."""

    delta_y: np.ndarray | float
    delta_z: np.ndarray | float
    gamma_t1: np.ndarray | float


def shift_displacement(m, t: float, t1, spec: QuadratureSpec | None = None) -> ShiftDisplacement:
    """Displacements of the kernel's shift operators for start ``t``."""
    tab = _engine(m, spec).table(t)
    t1 = np.asarray(t1, dtype=float)
    dy = tab.sigma_rr(t1) / tab.phi(t1)
    dz = tab.sigma_rz(t1) - tab.b_star(t1) * dy
    return ShiftDisplacement(dy, dz, m.gamma(t1))


def caplet_shift(m, t1, T1: float, T2: float | None, spec: QuadratureSpec | None = None) -> ShiftDisplacement:
    """Displacements used when pricing a period [T1, T2] option from time 0.

    For t1 <= T1 the z displacement vanishes; beyond T1 the y displacement is
    carried forward from T1 by mean reversion. ``T2=None`` skips the z part
    (swaptions have no z dependence).
    """
    eng = _engine(m, spec)
    base = eng.table(0.0)
    t1 = np.asarray(t1, dtype=float)
    lo = np.minimum(t1, T1)
    hi = np.maximum(t1, T1)
    dy = eng.phi(lo, hi) * base.sigma_rr(lo) / base.phi(T1)
    after = t1 > T1
    dz = np.zeros(t1.shape)
    if T2 is not None and np.any(after):
        tab = eng.table(T1)
        ta = t1[after]
        dz[after] = tab.sigma_rz(ta) + tab.b_plus(ta, T2) * tab.sigma_rr(ta)
    return ShiftDisplacement(dy, dz, m.gamma(t1))


def g1_multiplier(m, y, t: float, t1, v, spec: QuadratureSpec | None = None):
    """Non-shift part of the first-order operator at t1, i.e. everything multiplying f(y, z).

    R1*(t1) - psi_r(t,t1) (phi_r(t,t1)(y + Sigma_rz(0,t) + B*(t,t1) Sigma_rr(0,t))
    - B+(t,t1,v) Sigma_rr(t,t1)).
    """
    eng = _engine(m, spec)
    tab = eng.table(t)
    base = eng.table(0.0)
    t1 = np.asarray(t1, dtype=float)
    inner = tab.phi(t1) * (y + base.sigma_rz(t) + tab.b_star(t1) * base.sigma_rr(t))
    return m.drift.r1(t1) - tab.psi(t1) * (inner - tab.b_plus(t1, v) * tab.sigma_rr(t1))


def kernel_g0(m, y, z, t: float, eta, zeta, v: float, spec: QuadratureSpec | None = None):
    """Leading-order kernel density at (eta, zeta)."""
    if not t < v:
        raise DomainError("kernel_g0 needs t < v")
    st = kernel_stats(m, t, v, spec)
    gauss = _Gaussian(st)
    u = np.asarray(eta) + st.sigma_rz - st.phi_r * np.asarray(y)
    w = np.asarray(zeta) - st.mu_star(y) + 0.5 * st.sigma_zz - np.asarray(z)
    return gauss.pdf(u, w)


class _Gaussian:
    """The kernel's 2-D Gaussian: (eta, zeta) ~ N(mean(y, z), Sigma(t, v))."""

    def __init__(self, st: KernelStats):
        self.st = st
        self.det = st.sigma_rr * st.sigma_zz - st.sigma_rz ** 2
        if not (self.det > 1e-14 * st.sigma_rr * st.sigma_zz and self.det > 0):
            raise DegenerateCovarianceError(f"kernel covariance is singular on [{st.t}, {st.v}]")
        self.inv = np.array([[st.sigma_zz, -st.sigma_rz], [-st.sigma_rz, st.sigma_rr]]) / self.det

    def pdf(self, u, w):
        q = self.inv[0, 0] * u * u + 2 * self.inv[0, 1] * u * w + self.inv[1, 1] * w * w
        return np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(self.det))

    def mean(self, y, z):
        st = self.st
        return st.phi_r * y - st.sigma_rz, st.mu_star(y) - 0.5 * st.sigma_zz + z


def _axis_rule(lo: float, hi: float, cuts, n: int, width: float = 1.0):
    edges = segment_edges(lo, hi, cuts, width)
    return composite_nodes(edges, n)


class GaussianMoments:
    """E[P], the score moments and the score-Hessian moments of a payoff.

    The standard-normal coordinates are ordered so that the kink of the payoff
    (if any) lies along the first axis, where the rule is split at it.
    """

    def __init__(self, payoff: Callable, st: KernelStats, kink: tuple[str, float] | None = None,
                 nodes: int = 16, span: float = 8.0):
        self.payoff = payoff
        self.gauss = _Gaussian(st)
        self.kink = kink
        self.nodes = nodes
        self.span = span
        st = self.gauss.st
        # X = m + L u with the kink coordinate carried by u1 alone
        if kink is not None and kink[0] == "eta":
            a = math.sqrt(st.sigma_rr)
            self.L = np.array([[a, 0.0], [st.sigma_rz / a, math.sqrt(self.gauss.det / st.sigma_rr)]])
        else:
            a = math.sqrt(st.sigma_zz)
            self.L = np.array([[st.sigma_rz / a, math.sqrt(self.gauss.det / st.sigma_zz)], [a, 0.0]])
        self._u2, w2 = _axis_rule(-span, span, (), nodes)
        self._w2 = w2 * np.exp(-0.5 * self._u2 ** 2) / math.sqrt(2 * math.pi)

    def __call__(self, m_eta, m_zeta):
        """Arrays (h, g_eta, g_zeta, H_eta_zeta, H_zeta_zeta) for each mean."""
        m_eta = np.atleast_1d(np.asarray(m_eta, float))
        m_zeta = np.atleast_1d(np.asarray(m_zeta, float))
        out = np.empty((5, m_eta.size))
        inv = self.gauss.inv
        for k, (me, mz) in enumerate(zip(m_eta, m_zeta)):
            cuts = ()
            if self.kink is not None:
                axis, loc = self.kink
                centre, scale = (me, self.L[0, 0]) if axis == "eta" else (mz, self.L[1, 0])
                cuts = ((loc - centre) / scale,)
            u1, w1 = _axis_rule(-self.span, self.span, cuts, self.nodes)
            w1 = w1 * np.exp(-0.5 * u1 ** 2) / math.sqrt(2 * math.pi)
            U1, U2 = np.meshgrid(u1, self._u2, indexing="ij")
            W = np.outer(w1, self._w2)
            eta = me + self.L[0, 0] * U1 + self.L[0, 1] * U2
            zeta = mz + self.L[1, 0] * U1 + self.L[1, 1] * U2
            p = np.asarray(self.payoff(eta, zeta), dtype=float) * W
            de, dz = eta - me, zeta - mz
            se = inv[0, 0] * de + inv[0, 1] * dz
            sz = inv[1, 0] * de + inv[1, 1] * dz
            out[0, k] = p.sum()
            out[1, k] = (p * se).sum()
            out[2, k] = (p * sz).sum()
            out[3, k] = (p * (se * sz - inv[0, 1])).sum()
            out[4, k] = (p * (sz * sz - inv[1, 1])).sum()
        return out


def kernel_g1_apply(m, payoff: Callable, y: float, z: float, t: float, v: float,
                    spec: QuadratureSpec | None = None, kink: tuple[str, float] | None = None,
                    moments: GaussianMoments | None = None) -> float:
    """First-order correction: the integral of G1 against ``payoff`` (without D e^{-mu*}).

    The shift operators displace the Gaussian mean; y- and z-derivatives of
    G0 come from the Gaussian score.
    """
    eng = _engine(m, spec)
    st = kernel_stats(m, t, v, spec)
    if moments is None:
        moments = GaussianMoments(payoff, st, kink)
    gauss = moments.gauss

    def W(yy, zz):
        me, mz = gauss.mean(yy, zz)
        h, _, gz, _, _ = moments(me, np.broadcast_to(mz, np.shape(me)))
        return gz - h

    def integrand(t1):
        shift = shift_displacement(m, t, t1, spec)
        hy = shift.gamma_t1 * shift.delta_y
        hz = shift.gamma_t1 * shift.delta_z
        rp, rm = r1_plus_minus(m, y, t, t1, v, spec)
        w0 = W(np.full(t1.shape, y), np.full(t1.shape, z))
        return (rp * W(y + hy, z + hz) - rm * W(y - hy, z - hz)
                + g1_multiplier(m, y, t, t1, v, spec) * w0)

    splits = np.asarray(m.breakpoints)
    total = fixed_integrate(integrand, t, v, splits, eng.spec)
    me, mz = gauss.mean(y, z)
    h, ge, gz, hez, hzz = moments(me, mz)[:, 0]
    q = st.sigma_rz * (hez - ge) + st.sigma_zz * (hzz - gz)
    return float(total - q)


def price_by_kernel(m, payoff: Callable, t: float, v: float, y: float = 0.0, z: float = 0.0,
                    spec: QuadratureSpec | None = None, kink: tuple[str, float] | None = None):
    """D(t,v) e^{-mu*} times (G0 + G1) integrated against ``payoff``; returns (pv, order0, order1)."""
    st = kernel_stats(m, t, v, spec)
    moments = GaussianMoments(payoff, st, kink)
    me, mz = moments.gauss.mean(y, z)
    h = float(moments(me, mz)[0, 0])
    corr = kernel_g1_apply(m, payoff, y, z, t, v, spec, kink, moments)
    pref = discount(m.discount, t, v) * math.exp(-float(st.mu_star(y)))
    return pref * (h + corr), pref * h, pref * corr
