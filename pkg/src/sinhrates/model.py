"""The calibrated model: parameter curves, discount curve and lazy caches."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import DEFAULT_QUADRATURE, QuadratureSpec
from .termstructure import (DiscountCurve, DomainError, InputFormatError, PiecewiseCurve,
                            read_curve_csv, read_discount_csv, write_curve_csv, write_discount_csv)

DEFAULT_HORIZON = 30.0


@dataclass(frozen=True, eq=False)
class ModelParams:
    """sigma, alpha, gamma and y* curves plus the deterministic discount curve.

    The no-arbitrage drift R* is never an input. It is derived from the other
    fields on first use (``drift``) and cached, as are the per-start kernel
    tables (``kernel``). ``horizon`` bounds every time the caches can serve.
    """

    sigma: PiecewiseCurve
    alpha: PiecewiseCurve
    gamma: PiecewiseCurve
    y_star: PiecewiseCurve
    discount: DiscountCurve
    horizon: float = DEFAULT_HORIZON
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, init=False, repr=False,
                                   compare=False)

    def __post_init__(self):
        if self.sigma.min() < 0:
            raise ValueError("sigma(t) must be >= 0")
        if self.alpha.min() < 0:
            raise ValueError("alpha(t) must be >= 0")
        if self.gamma.min() <= 0:
            raise ValueError("gamma(t) must be > 0; use a small positive value for the Hull-White limit")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @classmethod
    def constant(cls, sigma: float, alpha: float, gamma: float, y_star: float = 0.0,
                 rate: float = 0.02, **kw) -> "ModelParams":
        """Constant parameters on a flat continuously-compounded curve."""
        return cls(PiecewiseCurve.constant(sigma), PiecewiseCurve.constant(alpha),
                   PiecewiseCurve.constant(gamma), PiecewiseCurve.constant(y_star),
                   DiscountCurve.flat(rate, horizon=max(100.0, kw.get("horizon", DEFAULT_HORIZON))),
                   **kw)

    @property
    def breakpoints(self) -> np.ndarray:
        """Union of every parameter breakpoint and discount pillar below the horizon."""
        pts = np.concatenate([self.sigma.breakpoints, self.alpha.breakpoints,
                              self.gamma.breakpoints, self.y_star.breakpoints,
                              self.discount.times])
        pts = np.unique(pts)
        return pts[pts < self.horizon]

    def check_time(self, *times: float) -> None:
        for t in times:
            if t < 0:
                raise DomainError(f"time {t} is negative")
            if t > self.horizon * (1 + 1e-14):
                raise DomainError(f"time {t} is beyond the model horizon {self.horizon}")

    def replace(self, **changes) -> "ModelParams":
        """Copy with some fields changed; caches are not carried over."""
        return replace(self, **changes)

    def _cached(self, key, build):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]

    @property
    def kernel(self):
        from .kernelmath import KernelEngine
        return self._cached("kernel", lambda: KernelEngine(self))

    @property
    def drift(self):
        from .drift import DriftTable
        return self._cached("drift", lambda: DriftTable(self))

    def short_rate(self, y, t):
        """r(y, t) with the installed drift."""
        t = np.asarray(t, dtype=float)
        g = self.gamma(t)
        out = (self.discount_forward(t) + self.drift.r_star(t)
               + np.sinh(g * (np.asarray(y) + self.y_star(t))) / g)
        return out

    def discount_forward(self, t):
        from .termstructure import instantaneous_forward
        return instantaneous_forward(self.discount, t)


CURVE_FILES = ("sigma", "alpha", "gamma", "y_star")


def save_model(m: ModelParams, directory) -> list[Path]:
    """Write the four parameter curves and the discount curve as CSV files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for name in CURVE_FILES:
        path = d / f"{name}.csv"
        write_curve_csv(path, getattr(m, name))
        out.append(path)
    path = d / "discount.csv"
    write_discount_csv(path, m.discount)
    out.append(path)
    return out


def load_model(directory, horizon: float | None = None) -> ModelParams:
    """Read a directory written by ``save_model``."""
    d = Path(directory)
    if not d.is_dir():
        raise InputFormatError(f"{d}: model directory not found")
    missing = [n for n in CURVE_FILES + ("discount",) if not (d / f"{n}.csv").is_file()]
    if missing:
        raise InputFormatError(f"{d}: missing {', '.join(n + '.csv' for n in missing)}")
    curves = {n: read_curve_csv(d / f"{n}.csv") for n in CURVE_FILES}
    dc = read_discount_csv(d / "discount.csv")
    try:
        return ModelParams(discount=dc, horizon=horizon or DEFAULT_HORIZON, **curves)
    except ValueError as exc:
        raise InputFormatError(f"{d}: {exc}") from exc
