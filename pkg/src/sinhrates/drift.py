"""No-arbitrage drift R*(t) and the bond-price correction functionals F1, F2."""

from __future__ import annotations

import numpy as np

from .kernelmath import _engine, g1_multiplier, r1_plus_minus, skew_argument, y_star_arg
from .numerics import (PiecewiseLegendre, QuadratureSpec, fixed_integrate, gauss_legendre,
                       integrate, segment_edges)
from .termstructure import DomainError


def _sinh_ratio(x, g):
    return np.sinh(x) / g


class DriftTable:
    """R1*, R2* and their running integrals on [0, horizon].

    R1* is sampled at the Gauss-Legendre nodes of every segment (segments
    split at all breakpoints) and held as a piecewise Legendre series, so
    interpolation and the running integrals are spectrally accurate.

    ``r2="calibrated"`` (default) fixes R2* by requiring the second-order
    bond formula to reprice the curve, so int_0^T R2* = F1^2/2 - F1 with
    F1 = F1(0, T). ``r2="product"`` uses R1*(t) int_0^t R1*, which leaves an
    error of order R1*^2 t even as sigma -> 0 when y* != 0.
    """

    def __init__(self, m, spec: QuadratureSpec | None = None, r2: str = "calibrated"):
        if r2 not in ("calibrated", "product"):
            raise ValueError(f"unknown R2* form {r2!r}")
        eng = _engine(m, spec)
        n = eng.spec.nodes
        self.r2_form = r2
        self.edges = segment_edges(0.0, m.horizon, m.breakpoints, eng.spec.max_segment)
        nodes = PiecewiseLegendre.nodes(self.edges, n)
        self.nodes = nodes
        r1 = _r1_star_on_grid(m, eng, self.edges, nodes)
        self._r1 = PiecewiseLegendre.from_node_values(self.edges, r1)
        self._i1 = self._r1.antiderivative()
        if r2 == "product":
            r2v = r1 * self._i1(nodes)
            self._r2 = PiecewiseLegendre.from_node_values(self.edges, r2v)
            self._i2 = self._r2.antiderivative()
        else:
            f1 = _f1_on_grid(m, eng, self.edges, nodes, r1, self._i1(nodes))
            self._i2 = PiecewiseLegendre.from_node_values(self.edges, 0.5 * f1 * f1 - f1)
            self._r2 = self._i2.derivative()
            r2v = self._r2(nodes)
            self.f1_values = f1
        self._cum = _Sum(self._i1, self._i2)
        self.r1_values = r1
        self.r2_values = r2v

    def r1(self, t):
        return self._r1(t)

    def r2(self, t):
        return self._r2(t)

    def r_star(self, t):
        return self._r1(t) + self._r2(t)

    def int_r1(self, t):
        """Integral of R1* from 0 to t."""
        return self._i1(t)

    def int_r2(self, t):
        return self._i2(t)

    def int_r_star(self, t):
        """Integral of R1* + R2* from 0 to t."""
        return self._cum(t)


class _Sum:
    def __init__(self, a, b):
        self.a, self.b = a, b

    def __call__(self, t):
        return self.a(t) + self.b(t)


def _f1_on_grid(m, eng, edges, nodes, r1, i1):
    """F1(0, T) at every node T, using the R1* already tabulated.

    The integrand depends on T only through B*(0, T), so everything else is
    evaluated once at the nodes.
    """
    base = eng.table(0.0)
    n = nodes.shape[1]
    x, w = gauss_legendre(n)

    def pieces(t1):
        g = m.gamma(t1)
        srr = base.sigma_rr(t1)
        ea_srr = np.exp(eng.A(t1)) * srr
        return g, g * (m.y_star(t1) - base.sigma_rz(t1) + base.b_star(t1) * ea_srr), ea_srr, base.psi(t1)

    flat = nodes.ravel()
    half = 0.5 * np.diff(edges)
    fw = (half[:, None] * w).ravel()
    g_f, a_f, e_f, p_f = pieces(flat)
    b1_f = base.b_star(flat)
    out = np.empty(flat.shape)
    for s in range(len(edges) - 1):
        rows = slice(s * n, (s + 1) * n)
        bs = b1_f[rows][:, None]
        k = s * n
        if k:
            f = p_f[:k] * (np.sinh(a_f[:k] - g_f[:k] * bs * e_f[:k]) / g_f[:k] + (bs - b1_f[:k]) * e_f[:k])
            full = (f * fw[:k]).sum(axis=1)
        else:
            full = 0.0
        hp = 0.5 * (flat[rows] - edges[s])
        pts = edges[s] + hp[:, None] * (x + 1.0)
        g, a_, e, psi = pieces(pts)
        f = psi * (np.sinh(a_ - g * bs * e) / g + (bs - base.b_star(pts)) * e)
        out[rows] = full + (f * w).sum(axis=1) * hp
    return out.reshape(nodes.shape) + i1


def _r1_star_on_grid(m, eng, edges, nodes):
    base = eng.table(0.0)
    n = nodes.shape[1]
    x, w = gauss_legendre(n)

    def pieces(t1):
        g = m.gamma(t1)
        srr = base.sigma_rr(t1)
        ea = np.exp(eng.A(t1))
        a = g * (m.y_star(t1) - base.sigma_rz(t1) + base.b_star(t1) * ea * srr)
        b = g * ea * srr
        c = base.psi(t1) * srr * ea
        return a, b, c

    flat = nodes.ravel()
    half = 0.5 * np.diff(edges)
    fw = (half[:, None] * w).ravel()
    a_f, b_f, c_f = pieces(flat)
    bstar_out = base.b_star(flat)
    inner = np.empty(flat.shape)
    for s in range(len(edges) - 1):
        rows = slice(s * n, (s + 1) * n)
        bs = bstar_out[rows]
        # whole segments to the left of segment s
        k = s * n
        if k:
            y_full = a_f[None, :k] - bs[:, None] * b_f[None, :k]
            full = (2.0 * np.sinh(0.5 * y_full) ** 2 * (c_f[:k] * fw[:k])).sum(axis=1)
        else:
            full = np.zeros(n)
        # partial segment [edges[s], t] for each outer node t
        t_out = flat[rows]
        lo = edges[s]
        hp = 0.5 * (t_out - lo)
        p = lo + hp[:, None] * (x + 1.0)
        a_p, b_p, c_p = pieces(p)
        y_part = a_p - bs[:, None] * b_p
        part = (2.0 * np.sinh(0.5 * y_part) ** 2 * c_p * w).sum(axis=1) * hp
        inner[rows] = full + part
    g = m.gamma(flat)
    y_tt = g * (m.y_star(flat) - base.sigma_rz(flat))
    r1 = -base.psi(flat) * (_sinh_ratio(y_tt, g) + np.exp(-eng.A(flat)) * inner)
    return r1.reshape(nodes.shape)


def r1_star(m, t: float, spec: QuadratureSpec | None = None, form: str = "sinh") -> float:
    """R1*(t) by direct quadrature.

    ``form="sinh"`` evaluates the sinh/cosh expression; ``form="pm"`` the
    equivalent expression built from R1+ and R1-.
    """
    if t < 0:
        raise DomainError("r1_star needs t >= 0")
    eng = _engine(m, spec)
    base = eng.table(0.0)
    splits = m.breakpoints
    g_t = float(m.gamma(t))
    if form == "sinh":
        y_tt = y_star_arg(m, t, t, spec)

        def f(t1):
            y = y_star_arg(m, t1, t, spec)
            return (base.psi(t1) * eng.phi(t1, t) * base.sigma_rr(t1)
                    * 2.0 * np.sinh(0.5 * y) ** 2)

        inner = integrate(f, 0.0, t, splits, eng.spec)
        return float(-base.psi(t) * (np.sinh(y_tt) / g_t + inner))
    if form == "pm":
        rp, rm = r1_plus_minus(m, 0.0, 0.0, t, t, spec)

        def f(t1):
            p, q = r1_plus_minus(m, 0.0, 0.0, t1, t, spec)
            return eng.phi(t1, t) * base.sigma_rr(t1) * (m.gamma(t1) * (p + q) - base.psi(t1))

        inner = integrate(f, 0.0, t, splits, eng.spec)
        return float(-rp + rm - base.psi(t) * inner)
    raise ValueError(f"unknown form {form!r}")


def r2_star(m, t, spec: QuadratureSpec | None = None, form: str = "product"):
    """Second-order drift R2*(t).

    ``form="product"`` is R1*(t) times the integral of R1* over [0, t];
    ``form="calibrated"`` is the value installed in the model's drift table
    (see DriftTable).
    """
    if form == "product":
        tab = m.drift if spec is None else DriftTable(m, spec)
        return tab.r1(t) * tab.int_r1(t)
    if form != "calibrated":
        raise ValueError(f"unknown R2* form {form!r}")
    tab = m.drift if spec is None else DriftTable(m, spec)
    return tab.r2(t)


def g1_integrand(m, y: float, t: float, t1, T: float, spec: QuadratureSpec | None = None):
    """First-order operator applied to the constant 1 at time t1 (shifts act trivially)."""
    t1 = np.asarray(t1, dtype=float)
    tab = _engine(m, spec).table(t)
    g = m.gamma(t1)
    arg = skew_argument(m, y, t, t1, T, spec)
    return tab.psi(t1) * np.sinh(arg) / g + g1_multiplier(m, y, t, t1, T, spec)


def f1_functional(m, y: float, t: float, T: float, spec: QuadratureSpec | None = None) -> float:
    if t > T:
        raise DomainError("f1_functional needs t <= T")
    m.check_time(T)
    eng = _engine(m, spec)
    return float(fixed_integrate(lambda s: g1_integrand(m, y, t, s, T, spec), t, T,
                                 m.breakpoints, eng.spec))


def f2_functional(m, t: float, T: float, spec: QuadratureSpec | None = None, y: float = 0.0,
                  f1: float | None = None) -> float:
    """Second-order functional with the inner shifts dropped.

    Without shifts the ordered double integral of g1(t1) g1(t2) is half the
    square of F1.
    """
    if t > T:
        raise DomainError("f2_functional needs t <= T")
    if f1 is None:
        f1 = f1_functional(m, y, t, T, spec)
    tab = m.drift
    r2_int = float(tab.int_r2(T) - tab.int_r2(t))
    return 0.5 * f1 * f1 - r2_int
