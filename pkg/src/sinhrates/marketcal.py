"""Bootstrap calibration of sigma(t), gamma(t) and y*(t) to caplet implied vols.

Quotes are Hull-White normal vols. Maturities are period end dates T2, so a
caplet quoted at maturity T_k depends on parameters over [0, T_k] only and
piece k of every curve lives on [T_{k-1}, T_k). Each bucket is then a small
3-parameter least-squares problem with all earlier pieces frozen.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .implied import caplet_variance_terms, hull_white_model, NegativeVarianceError
from .model import ModelParams, save_model
from .numerics import QuadratureSpec
from .pricing import InstrumentSpec
from .termstructure import DiscountCurve, DomainError, InputFormatError, PiecewiseCurve, _read_rows

MIN_STRIKES = 3
GAMMA_BOUNDS = (0.5, 2000.0)
SIGMA_BOUNDS = (1e-5, 1.0)
QUOTE_HEADER = ("maturity", "tenor", "strike", "implied_vol")


class UnderdeterminedError(ValueError):
    """Fewer than three strikes in a maturity bucket."""


@dataclass(frozen=True)
class Quote:
    maturity: float
    tenor: float
    strike: float
    implied_vol: float

    @property
    def start(self) -> float:
        return self.maturity - self.tenor


class QuoteSurface:
    """Caplet vol quotes grouped by maturity (the payment date T2)."""

    def __init__(self, quotes):
        self.quotes = sorted(quotes, key=lambda q: (q.maturity, q.strike))
        for q in self.quotes:
            if not (q.tenor > 0 and q.maturity > q.tenor):
                raise DomainError(f"quote at maturity {q.maturity}: need 0 < tenor < maturity")
            if not q.implied_vol > 0:
                raise DomainError(f"quote at maturity {q.maturity}: implied vol must be positive")

    @classmethod
    def from_csv(cls, path) -> "QuoteSurface":
        path = Path(path)
        rows = _read_rows(path, QUOTE_HEADER)
        if not rows:
            raise InputFormatError(f"{path}: no quotes")
        try:
            return cls([Quote(*vals) for _, vals in rows])
        except DomainError as exc:
            raise InputFormatError(f"{path}: {exc}") from exc

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(QUOTE_HEADER)
            for q in self.quotes:
                w.writerow([repr(q.maturity), repr(q.tenor), repr(q.strike), repr(q.implied_vol)])

    @property
    def maturities(self) -> list[float]:
        return sorted({q.maturity for q in self.quotes})

    def bucket(self, maturity: float) -> list[Quote]:
        return [q for q in self.quotes if q.maturity == maturity]

    def __len__(self):
        return len(self.quotes)


@dataclass
class BucketStatus:
    maturity: float
    converged: bool
    cost: float
    nfev: int
    message: str


@dataclass
class CalibrationReport:
    sigma: PiecewiseCurve
    gamma: PiecewiseCurve
    y_star: PiecewiseCurve
    alpha: float
    discount: DiscountCurve
    residuals: list = field(default_factory=list)
    buckets: list = field(default_factory=list)
    libor: bool = False

    @property
    def converged(self) -> bool:
        return all(b.converged for b in self.buckets)

    def model(self, horizon: float | None = None, qspec: QuadratureSpec | None = None) -> ModelParams:
        kw = {} if qspec is None else {"quadrature": qspec}
        if horizon is not None:
            kw["horizon"] = horizon
        return ModelParams(self.sigma, PiecewiseCurve.constant(self.alpha), self.gamma,
                           self.y_star, self.discount, **kw)

    def max_abs_residual(self) -> float:
        return max((abs(r[-1]) for r in self.residuals), default=0.0)

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        out = save_model(self.model(), d)
        path = d / "residuals.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["maturity", "tenor", "strike", "quoted_vol", "model_vol", "residual"])
            for row in self.residuals:
                w.writerow([repr(float(x)) for x in row])
        out.append(path)
        path = d / "buckets.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["maturity", "converged", "cost", "nfev", "message"])
            for b in self.buckets:
                w.writerow([repr(b.maturity), int(b.converged), repr(b.cost), b.nfev, b.message])
        out.append(path)
        return out


def _curves(pieces, maturities):
    bp = np.concatenate([[0.0], maturities[:len(pieces) - 1]])
    vals = np.array(pieces)
    return [PiecewiseCurve(bp, vals[:, j]) for j in range(3)]


class _Bucket:
    """Model vols of one bucket's quotes as a function of that bucket's (sigma, gamma, y*)."""

    def __init__(self, quotes, pieces, maturities, dc, alpha, qspec, libor):
        self.quotes = quotes
        self.pieces = pieces
        self.maturities = maturities
        self.dc = dc
        self.alpha = alpha
        self.qspec = qspec
        self.libor = libor
        self.T2 = quotes[0].maturity
        self.T1 = {q.start for q in quotes}
        hw = hull_white_model(self._model([1.0, 1.0, 0.0]))
        self.unit = {t1: caplet_variance_terms(hw, t1, self.T2, libor, qspec)[0] for t1 in self.T1}

    def _model(self, params):
        sig, gam, ys = _curves(self.pieces + [tuple(params)], self.maturities)
        kw = {} if self.qspec is None else {"quadrature": self.qspec}
        return ModelParams(sig, PiecewiseCurve.constant(self.alpha), gam, ys, self.dc,
                           horizon=self.T2, **kw)

    def vols(self, params) -> np.ndarray:
        m = self._model(params)
        out = np.empty(len(self.quotes))
        for i, q in enumerate(self.quotes):
            V, c1, c2, c3 = caplet_variance_terms(m, q.start, self.T2, self.libor, self.qspec)
            inst = InstrumentSpec.caplet(q.start, self.T2, q.strike, libor=self.libor)
            sv = math.sqrt(V)
            d = (-inst.delta_z_star(self.dc) + 0.5 * V) / sv - sv
            total = V + 2.0 * sv * (c1 - c2 * d + c3 * (d * d - 1.0))
            if total < 0.1 * V:
                raise NegativeVarianceError("effective variance collapsed")
            out[i] = math.sqrt(total / self.unit[q.start])
        return out


def _initial_guess(quotes, prev, unit_vol):
    if prev is not None:
        return prev
    atm = float(np.median([q.implied_vol for q in quotes]))
    return (atm, 50.0, 0.0) if unit_vol else (0.01, 50.0, 0.0)


def calibrate(quotes: QuoteSurface, dc: DiscountCurve, alpha: float = 0.15,
              qspec: QuadratureSpec | None = None, libor: bool = False,
              tol: float = 1e-14, max_nfev: int = 200) -> CalibrationReport:
    """Sequential bootstrap over maturity buckets.

    ``libor`` selects the term-rate effective variance instead of the
    compounded one. A bucket that does not converge is flagged in the report
    with its best residuals; later buckets are still fitted.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    mats = np.array(quotes.maturities)
    for T in mats:
        n = len({q.strike for q in quotes.bucket(T)})
        if n < MIN_STRIKES:
            raise UnderdeterminedError(f"maturity {T}: {n} strikes, need at least {MIN_STRIKES}")
    pieces: list[tuple] = []
    statuses = []
    residuals = []
    lo = np.array([math.log(SIGMA_BOUNDS[0]), math.log(GAMMA_BOUNDS[0]), -1.0])
    hi = np.array([math.log(SIGMA_BOUNDS[1]), math.log(GAMMA_BOUNDS[1]), 1.0])
    for T in mats:
        qs = quotes.bucket(T)
        bucket = _Bucket(qs, pieces, mats, dc, alpha, qspec, libor)
        target = np.array([q.implied_vol for q in qs])

        def unpack(x):
            return (math.exp(x[0]), math.exp(x[1]), x[2])

        def resid(x):
            try:
                return bucket.vols(unpack(x)) - target
            except (NegativeVarianceError, FloatingPointError, OverflowError):
                return np.full(len(qs), 1.0)

        s0, g0, y0 = pieces[-1] if pieces else (float(np.median(target)), 50.0, 0.0)
        x0 = np.clip([math.log(s0), math.log(g0), y0], lo + 1e-9, hi - 1e-9)
        with np.errstate(over="raise", invalid="raise"):
            sol = least_squares(resid, x0, method="trf", bounds=(lo, hi), x_scale="jac",
                                xtol=tol, ftol=tol, gtol=tol, max_nfev=max_nfev, diff_step=1e-7)
        params = unpack(sol.x)
        pieces.append(params)
        statuses.append(BucketStatus(float(T), bool(sol.success), float(sol.cost), int(sol.nfev),
                                     str(sol.message)))
        fitted = bucket.vols(params)
        for q, v in zip(qs, fitted):
            residuals.append((q.maturity, q.tenor, q.strike, q.implied_vol, float(v), float(v - q.implied_vol)))
    sig, gam, ys = _curves(pieces, mats)
    return CalibrationReport(sig, gam, ys, alpha, dc, residuals, statuses, libor)


def repriced_vols(report: CalibrationReport, quotes: QuoteSurface,
                  qspec: QuadratureSpec | None = None) -> np.ndarray:
    """Model vols of every quote recomputed from the fitted curves alone."""
    from .implied import model_implied_vol
    m = report.model(horizon=max(quotes.maturities), qspec=qspec)
    return np.array([model_implied_vol(m, InstrumentSpec.caplet(q.start, q.maturity, q.strike,
                                                                libor=report.libor), qspec)
                     for q in quotes.quotes])


def synthetic_quotes(m: ModelParams, maturities, strikes, tenor: float = 0.5,
                     libor: bool = False, qspec: QuadratureSpec | None = None) -> QuoteSurface:
    """Quotes generated by ``m`` itself (for round-trip checks)."""
    from .implied import model_implied_vol
    out = []
    for T in maturities:
        for K in strikes:
            inst = InstrumentSpec.caplet(T - tenor, T, K, libor=libor)
            out.append(Quote(float(T), float(tenor), float(K), model_implied_vol(m, inst, qspec)))
    return QuoteSurface(out)
