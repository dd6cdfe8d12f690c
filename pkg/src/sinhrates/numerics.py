"""Quadrature, bracketing root finding and Gaussian distribution helpers.

Every time integral in the package is evaluated with fixed-order
Gauss-Legendre rules on sub-intervals split at the breakpoints of the
piecewise-constant model curves. The integrands are smooth between
breakpoints, so splitting is what makes the rules spectrally accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, special


class QuadratureError(ArithmeticError):
    """Raised when refinement fails to reach the requested tolerance."""

    def __init__(self, message: str, previous: float, last: float):
        super().__init__(f"{message} (previous={previous!r}, last={last!r})")
        self.previous = previous
        self.last = last


class BracketError(ValueError):
    """Raised when a root finder is handed an interval without a sign change."""


class DegenerateCovarianceError(ValueError):
    """Raised for a singular 2x2 covariance."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Settings for the composite Gauss-Legendre rules.

    Attributes
    ----------
    nodes : int
        Gauss-Legendre nodes per sub-interval.
    refinement_factor : int
        Multiplier applied to ``nodes`` on each refinement step.
    rel_tol : float
        Target relative agreement between successive refinements.
    max_refinements : int
        Refinement steps allowed before giving up.
    max_segment : float
        Longest sub-interval (years) a single rule is applied to.
    abs_tol : float
        Absolute floor for the convergence test (integrals that vanish).
    """

    nodes: int = 16
    refinement_factor: int = 2
    rel_tol: float = 1e-10
    max_refinements: int = 8
    max_segment: float = 0.25
    abs_tol: float = 1e-300

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("nodes must be positive")
        if self.refinement_factor < 2:
            raise ValueError("refinement_factor must be at least 2")
        if self.max_segment <= 0:
            raise ValueError("max_segment must be positive")

    def refined(self) -> "QuadratureSpec":
        return QuadratureSpec(
            nodes=self.nodes * self.refinement_factor,
            refinement_factor=self.refinement_factor,
            rel_tol=self.rel_tol,
            max_refinements=self.max_refinements,
            max_segment=self.max_segment,
            abs_tol=self.abs_tol,
        )


DEFAULT_QUADRATURE = QuadratureSpec()


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def segment_edges(a: float, b: float, splits: Iterable[float] = (),
                  max_segment: float = math.inf) -> np.ndarray:
    """Edges of [a, b] split at ``splits`` and capped at ``max_segment`` length."""
    inner = [s for s in splits if a < s < b]
    edges = np.unique(np.asarray([a, b, *inner], dtype=float))
    if not math.isfinite(max_segment) or len(edges) < 2:
        return edges
    out = [edges[:1]]
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((hi - lo) / max_segment - 1e-12)))
        out.append(np.linspace(lo, hi, k + 1)[1:])
    return np.concatenate(out)


def composite_nodes(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened nodes and weights of an ``n``-point rule on every segment."""
    x, w = gauss_legendre(n)
    lo = edges[:-1, None]
    half = 0.5 * np.diff(edges)[:, None]
    nodes = lo + half * (x + 1.0)
    weights = half * w
    return nodes.ravel(), weights.ravel()


def fixed_integrate(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                    splits: Iterable[float] = (), spec: QuadratureSpec = DEFAULT_QUADRATURE,
                    nodes: int | None = None):
    """Single composite Gauss-Legendre estimate (no refinement)."""
    if b < a:
        raise ValueError(f"integration bounds reversed: a={a} > b={b}")
    if a == b:
        return 0.0
    edges = segment_edges(a, b, splits, spec.max_segment)
    x, w = composite_nodes(edges, nodes or spec.nodes)
    return np.asarray(f(x)) @ w


def integrate(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
              splits: Iterable[float] = (), spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Integrate a vectorised ``f`` over [a, b], refining until two estimates agree.

    Raises
    ------
    QuadratureError
        If ``spec.max_refinements`` refinements do not reach ``spec.rel_tol``.
    """
    if b < a:
        raise ValueError(f"integration bounds reversed: a={a} > b={b}")
    if a == b:
        return 0.0
    splits = tuple(splits)
    edges = segment_edges(a, b, splits, spec.max_segment)

    def estimate(n):
        x, w = composite_nodes(edges, n)
        fx = np.asarray(f(x))
        # |f| integral sets the rounding floor for integrands that cancel
        return float(fx @ w), float(np.abs(fx) @ w)

    n = spec.nodes
    prev, _ = estimate(n)
    last = cur = prev
    for _ in range(spec.max_refinements):
        n *= spec.refinement_factor
        cur, scale = estimate(n)
        if not math.isfinite(cur):
            raise QuadratureError("non-finite integral", prev, cur)
        noise = 64.0 * np.finfo(float).eps * scale
        if abs(cur - prev) <= max(spec.rel_tol * abs(cur), noise) + spec.abs_tol:
            return cur
        last, prev = prev, cur
    raise QuadratureError("quadrature did not converge", last, cur)


def cumulative_integral(f: Callable[[np.ndarray], np.ndarray], a: float, points,
                        splits: Iterable[float] = (),
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Integrals of ``f`` from ``a`` to each of ``points``.

    All points share one composite grid whose edges include every point, so
    the cost is one pass over the grid however many points are requested.
    ``f`` may return shape ``(..., N)`` for N nodes; the result then has shape
    ``(..., len(points))``.
    """
    pts = np.asarray(points, dtype=float)
    flat = pts.ravel()
    if flat.size == 0:
        return np.zeros(pts.shape)
    if np.any(flat < a):
        raise ValueError("cumulative_integral needs every point >= start")
    top = float(flat.max())
    edges = np.unique(np.concatenate([[a], flat, [s for s in splits if a < s < top]]))
    if len(edges) == 1:
        probe = np.asarray(f(np.array([a])))
        return np.zeros(probe.shape[:-1] + pts.shape)
    # cap segment length without losing the requested edges
    gaps = np.diff(edges)
    counts = np.maximum(1, np.ceil(gaps / spec.max_segment - 1e-12).astype(int))
    if np.any(counts > 1):
        pieces = [edges[:1]]
        for lo, hi, k in zip(edges[:-1], edges[1:], counts):
            pieces.append(np.linspace(lo, hi, k + 1)[1:])
        fine = np.concatenate(pieces)
    else:
        fine = edges
    x, w = composite_nodes(fine, spec.nodes)
    vals = np.asarray(f(x)) * w
    seg = vals.reshape(vals.shape[:-1] + (len(fine) - 1, spec.nodes)).sum(axis=-1)
    cum = np.concatenate([np.zeros(seg.shape[:-1] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    idx = np.searchsorted(fine, flat)
    return cum[..., idx].reshape(cum.shape[:-1] + pts.shape)


class PiecewiseLegendre:
    """Piecewise polynomial held as Legendre coefficients per segment.

    Built from samples at the Gauss-Legendre nodes of each segment, which
    makes the fit an exact interpolant of degree ``n - 1``. A point on an
    inner edge belongs to the segment on its right.
    """

    def __init__(self, edges: np.ndarray, coeffs: np.ndarray):
        self.edges = np.asarray(edges, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape[0] != len(self.edges) - 1:
            raise ValueError("need one coefficient row per segment")

    @staticmethod
    @lru_cache(maxsize=16)
    def _analysis(n: int) -> np.ndarray:
        x, w = gauss_legendre(n)
        vander = np.polynomial.legendre.legvander(x, n - 1)
        return (vander * w[:, None]).T * ((2 * np.arange(n) + 1) / 2.0)[:, None]

    @classmethod
    def from_node_values(cls, edges: np.ndarray, values: np.ndarray) -> "PiecewiseLegendre":
        """``values[s, i]`` is the sample at node ``i`` of segment ``s``."""
        values = np.asarray(values, dtype=float)
        return cls(edges, values @ cls._analysis(values.shape[1]).T)

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], edges: np.ndarray,
                      n: int = 16) -> "PiecewiseLegendre":
        x, _ = composite_nodes(np.asarray(edges, float), n)
        return cls.from_node_values(edges, np.asarray(f(x)).reshape(-1, n))

    @staticmethod
    def nodes(edges: np.ndarray, n: int = 16) -> np.ndarray:
        """Node grid of shape ``(segments, n)`` matching ``from_node_values``."""
        x, _ = composite_nodes(np.asarray(edges, float), n)
        return x.reshape(-1, n)

    def _locate(self, x: np.ndarray):
        lo, hi = self.edges[0], self.edges[-1]
        slack = 1e-12 * max(1.0, abs(hi))
        if np.any(x < lo - slack) or np.any(x > hi + slack):
            raise ValueError(f"evaluation outside [{lo}, {hi}]")
        seg = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.edges) - 2)
        a, b = self.edges[seg], self.edges[seg + 1]
        return seg, (2.0 * x - (a + b)) / (b - a)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        seg, u = self._locate(x.ravel())
        out = np.polynomial.legendre.legval(u, self.coeffs[seg].T, tensor=False)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def antiderivative(self) -> "PiecewiseLegendre":
        """Integral from ``edges[0]``, continuous across segments."""
        half = 0.5 * np.diff(self.edges)
        c = np.polynomial.legendre.legint(self.coeffs, lbnd=-1, axis=1) * half[:, None]
        totals = np.polynomial.legendre.legval(1.0, c.T)
        c[:, 0] += np.concatenate([[0.0], np.cumsum(totals)[:-1]])
        return PiecewiseLegendre(self.edges, c)

    def derivative(self) -> "PiecewiseLegendre":
        half = 0.5 * np.diff(self.edges)
        c = np.polynomial.legendre.legder(self.coeffs, axis=1) / half[:, None]
        return PiecewiseLegendre(self.edges, c)

    @property
    def total(self) -> float:
        return float(self.antiderivative()(self.edges[-1]))


def find_root(g: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12,
              maxiter: int = 200) -> float:
    """Bracketed root of a monotone ``g`` on [lo, hi] (Brent's method).

    Raises
    ------
    BracketError
        If ``g(lo)`` and ``g(hi)`` have the same sign.
    ArithmeticError
        If ``g`` returns NaN at a bracket end.
    """
    glo, ghi = g(lo), g(hi)
    if math.isnan(glo) or math.isnan(ghi):
        raise ArithmeticError(f"g evaluated to NaN at bracket end ({glo}, {ghi})")
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if glo * ghi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: g={glo:.6g}, {ghi:.6g}")

    def checked(x):
        v = g(x)
        if math.isnan(v):
            raise ArithmeticError(f"g evaluated to NaN at x={x}")
        return v

    return optimize.brentq(checked, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                           maxiter=maxiter)


def norm_cdf(x):
    return special.ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def norm_cdf_diff(lo, hi):
    """Phi(hi) - Phi(lo) without cancellation when the two are close."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    out = np.empty(lo.shape)
    near = np.abs(hi - lo) < 0.5
    if np.any(near):
        x, w = gauss_legendre(12)
        a, b = lo[near], hi[near]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        out[near] = half * (norm_pdf(mid[:, None] + half[:, None] * x) @ w)
    far = ~near
    if np.any(far):
        a, b = lo[far], hi[far]
        upper = (a > 0) & (b > 0)
        out[far] = np.where(upper, special.ndtr(-a) - special.ndtr(-b),
                            special.ndtr(b) - special.ndtr(a))
    return out if out.ndim else float(out)


def norm_cdf_spread(centre, half):
    """Phi(centre + half) - Phi(centre - half), accurate for tiny ``half``.

    Taking the half-width directly avoids losing it to rounding when it is
    many orders of magnitude below ``centre``.
    """
    c, h = np.broadcast_arrays(np.asarray(centre, float), np.asarray(half, float))
    out = np.empty(c.shape)
    near = np.abs(h) < 0.25
    if np.any(near):
        x, w = gauss_legendre(12)
        cc, hh = c[near], h[near]
        out[near] = hh * (norm_pdf(cc[:, None] + hh[:, None] * x) @ w)
    far = ~near
    if np.any(far):
        out[far] = norm_cdf_diff(c[far] - h[far], c[far] + h[far])
    return out if out.ndim else float(out)


def expm1_ratio(x):
    """(1 - exp(-x)) / x, continuous at 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-safe) / safe)


@dataclass(frozen=True)
class BivariateGaussian:
    """Zero-mean 2-D Gaussian given by its covariance entries."""

    var_u: float
    cov: float
    var_w: float

    def __post_init__(self):
        if self.var_u < 0 or self.var_w < 0:
            raise ValueError("variances must be nonnegative")
        if self.det < -1e-14 * self.var_u * self.var_w:
            raise ValueError("covariance is not positive semi-definite")

    @property
    def det(self) -> float:
        return self.var_u * self.var_w - self.cov * self.cov

    def pdf(self, u, w):
        det = self.det
        if not det > 0:
            raise DegenerateCovarianceError(f"singular covariance (det={det:.3e})")
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        q = (self.var_w * u * u - 2.0 * self.cov * u * w + self.var_u * w * w) / det
        return np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))


def bvn_pdf(u, w, cov: BivariateGaussian):
    return cov.pdf(u, w)


def pairwise_sum(values: Sequence[float]) -> float:
    """Sum in a fixed binary-tree order (deterministic for a given length)."""
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]
