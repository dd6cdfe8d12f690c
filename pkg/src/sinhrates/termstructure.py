"""Piecewise-constant parameter curves and the log-linear discount curve."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a curve or formula."""


class InputFormatError(ValueError):
    """Malformed input file; the message carries the offending line number."""


def _check_times(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DomainError("times must be >= 0")
    return t


@dataclass(frozen=True, eq=False)
class PiecewiseCurve:
    """Piecewise-constant function of time.

    ``values[i]`` applies on ``[breakpoints[i], breakpoints[i+1])``; the last
    value extends to infinity. ``breakpoints[0]`` must be 0.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).ravel()
        vals = np.asarray(self.values, dtype=float).ravel()
        if bp.size == 0 or bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if bp.size != vals.size:
            raise ValueError("need one value per breakpoint")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly ascending")
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseCurve":
        return cls(np.array([0.0]), np.array([float(value)]))

    @classmethod
    def from_pairs(cls, times: Sequence[float], values: Sequence[float]) -> "PiecewiseCurve":
        return cls(np.asarray(times, float), np.asarray(values, float))

    def __call__(self, t):
        return curve_value(self, t)

    @property
    def inner_breakpoints(self) -> np.ndarray:
        return self.breakpoints[1:]

    def refine(self, times: Iterable[float]) -> "PiecewiseCurve":
        """Same function with extra (redundant) breakpoints inserted."""
        bp = np.union1d(self.breakpoints, np.asarray(list(times), float))
        return PiecewiseCurve(bp, curve_value(self, bp))

    def with_value_on(self, start: float, end: float, value: float) -> "PiecewiseCurve":
        """Copy whose value on ``[start, end)`` is replaced by ``value``."""
        if not 0 <= start < end:
            raise DomainError("need 0 <= start < end")
        ref = self.refine([start, end])
        vals = ref.values.copy()
        vals[(ref.breakpoints >= start) & (ref.breakpoints < end)] = value
        return PiecewiseCurve(ref.breakpoints, vals)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def __repr__(self):
        return f"PiecewiseCurve(breakpoints={self.breakpoints.tolist()}, values={self.values.tolist()})"


def curve_value(c: PiecewiseCurve, t):
    """Value of the interval containing ``t`` (``[t_i, t_{i+1})`` owns ``t_i``)."""
    t = _check_times(t)
    idx = np.searchsorted(c.breakpoints, t, side="right") - 1
    out = c.values[idx]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class DiscountCurve:
    """Discount factors D(0, t), linear in log-discount between pillars.

    The implied instantaneous forward is constant on each pillar segment and
    is extended flat beyond the last pillar.
    """

    times: np.ndarray
    log_discounts: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        ld = np.asarray(self.log_discounts, dtype=float).ravel()
        if t.size != ld.size or t.size == 0:
            raise ValueError("need matching, non-empty pillar arrays")
        if t[0] != 0.0:
            t = np.concatenate([[0.0], t])
            ld = np.concatenate([[0.0], ld])
        if ld[0] != 0.0:
            raise ValueError("D(0,0) must be 1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("pillar times must be strictly ascending")
        if not np.all(np.isfinite(ld)):
            raise ValueError("discount factors must be positive and finite")
        if t.size == 1:
            raise ValueError("need at least one pillar beyond t=0")
        fwd = -np.diff(ld) / np.diff(t)
        for arr in (t, ld, fwd):
            arr.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "log_discounts", ld)
        object.__setattr__(self, "_forwards", fwd)

    @classmethod
    def flat(cls, rate: float, horizon: float = 100.0) -> "DiscountCurve":
        return cls(np.array([0.0, horizon]), np.array([0.0, -rate * horizon]))

    @classmethod
    def from_discounts(cls, times: Sequence[float], discounts: Sequence[float]) -> "DiscountCurve":
        d = np.asarray(discounts, dtype=float)
        if np.any(d <= 0):
            raise ValueError("discount factors must be positive")
        return cls(np.asarray(times, float), np.log(d))

    @property
    def pillars(self) -> np.ndarray:
        return self.times[1:]

    def _segment(self, t: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self._forwards) - 1)

    def log_discount(self, t):
        t = _check_times(t)
        i = self._segment(t)
        return self.log_discounts[i] - self._forwards[i] * (t - self.times[i])

    def __call__(self, t):
        out = np.exp(self.log_discount(t))
        return float(out) if np.ndim(out) == 0 else out


def discount(dc: DiscountCurve, t1, t2):
    """Forward discount factor D(t1, t2) = D(0, t2) / D(0, t1)."""
    t1 = _check_times(t1)
    t2 = _check_times(t2)
    if np.any(t1 > t2):
        raise DomainError("discount needs t1 <= t2")
    out = np.exp(dc.log_discount(t2) - dc.log_discount(t1))
    return float(out) if np.ndim(out) == 0 else out


def instantaneous_forward(dc: DiscountCurve, t):
    """-d/dt ln D(0, t): slope of the log-discount segment owning ``t``."""
    t = _check_times(t)
    out = dc._forwards[dc._segment(t)]
    return float(out) if np.ndim(out) == 0 else out


def _read_rows(path: Path, header: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise InputFormatError(f"{path}:1: empty file, expected header {','.join(header)}")
        if [h.strip() for h in first] != list(header):
            raise InputFormatError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputFormatError(f"{path}:{lineno}: non-numeric field in {row}")
            if not all(math.isfinite(v) for v in vals):
                raise InputFormatError(f"{path}:{lineno}: non-finite field in {row}")
            rows.append((lineno, vals))
    return rows


def read_discount_csv(path) -> DiscountCurve:
    """Load ``time,discount`` pillars (ACT/365F year fractions)."""
    path = Path(path)
    rows = _read_rows(path, ("time", "discount"))
    if not rows:
        raise InputFormatError(f"{path}: no pillars")
    for lineno, (t, d) in rows:
        if t < 0 or d <= 0:
            raise InputFormatError(f"{path}:{lineno}: need time >= 0 and discount > 0")
    try:
        return DiscountCurve.from_discounts([r[1][0] for r in rows], [r[1][1] for r in rows])
    except ValueError as exc:
        raise InputFormatError(f"{path}: {exc}")


def read_curve_csv(path) -> PiecewiseCurve:
    """Load a ``time,value`` piecewise-constant curve."""
    path = Path(path)
    rows = _read_rows(path, ("time", "value"))
    if not rows:
        raise InputFormatError(f"{path}: no curve rows")
    try:
        return PiecewiseCurve.from_pairs([r[1][0] for r in rows], [r[1][1] for r in rows])
    except ValueError as exc:
        raise InputFormatError(f"{path}: {exc}")


def write_curve_csv(path, curve: PiecewiseCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "value"])
        for t, v in zip(curve.breakpoints, curve.values):
            w.writerow([repr(float(t)), repr(float(v))])


def write_discount_csv(path, dc: DiscountCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "discount"])
        for t, ld in zip(dc.pillars, dc.log_discounts[1:]):
            w.writerow([repr(float(t)), repr(float(math.exp(ld)))])
