"""Acceptance checks on built-in reference parameter sets.

Each ``criterion_N`` returns a CriterionResult with the measured numbers; the
CLI ``validate`` command and the acceptance tests both run them.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .drift import r1_star
from .implied import effective_variance, hw_baseline_price
from .kernelmath import _engine, b_plus
from .marketcal import calibrate, repriced_vols, synthetic_quotes
from .model import ModelParams
from .numerics import integrate
from .oracle import McConfig, mc_discount, mc_price_many
from .pricing import InstrumentSpec, forward_rate, kernel_price_rfr_caplet, price
from .termstructure import DiscountCurve, PiecewiseCurve

RATE = 0.02
ALPHA = 0.15
SIGMA = 0.01
GAMMA = 50.0
GAMMA_YSTAR = 0.2
PERIODS = ((1.0, 1.5), (5.0, 5.5))
STRIKES = (0.01, 0.02, 0.03)
FULL_PATHS = 1_000_000
QUICK_PATHS = 100_000
DEFAULT_SEED = 20240611


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} {flag} {self.name}: {self.detail} [{self.seconds:.1f}s]"

    def as_dict(self) -> dict:
        return {"criterion": self.number, "name": self.name, "passed": self.passed,
                "detail": self.detail, "seconds": round(self.seconds, 3), "measured": self.measured}


def smile_model(sigma: float = SIGMA, horizon: float = 12.0) -> ModelParams:
    return ModelParams.constant(sigma, ALPHA, GAMMA, GAMMA_YSTAR / GAMMA, rate=RATE, horizon=horizon)


def hw_limit_model(horizon: float = 12.0) -> ModelParams:
    return ModelParams.constant(SIGMA, ALPHA, 1e-8, 0.0, rate=RATE, horizon=horizon)


def _workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def _timed(fn):
    def run(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def grid_instruments(T1: float, T2: float, strikes=STRIKES):
    """RFR caplet, term-rate caplet and 2-period swaption for each strike."""
    out = []
    mid = 0.5 * (T1 + T2)
    for K in strikes:
        out.append(InstrumentSpec.caplet(T1, T2, K, id=f"rfr_{T1}_{K}"))
        out.append(InstrumentSpec.caplet(T1, T2, K, libor=True, id=f"libor_{T1}_{K}"))
        out.append(InstrumentSpec.swaption([T1, mid, T2], K, id=f"swaption_{T1}_{K}"))
    return out


@_timed
def criterion_1() -> CriterionResult:
    """Hull-White degeneration of both caplet formulas, 9 (T1, T2, K) combinations."""
    m = hw_limit_model()
    worst = 0.0
    rows = []
    for T1, T2 in ((0.5, 1.0), (1.0, 1.5), (5.0, 5.5)):
        for K in STRIKES:
            for libor in (False, True):
                inst = InstrumentSpec.caplet(T1, T2, K, libor=libor)
                pv = price(m, inst).pv
                base = hw_baseline_price(m, inst, effective_variance(m, inst).baseline)
                rel = abs(pv - base) / base
                worst = max(worst, rel)
                rows.append((T1, T2, K, inst.kind, pv, base, rel))
    return CriterionResult(1, "Hull-White degeneration", worst <= 1e-10,
                           f"max rel diff {worst:.2e} (tol 1e-10) over {len(rows)} prices",
                           {"max_rel": worst, "rows": rows})


@_timed
def criterion_2(paths: int = FULL_PATHS, seed: int = DEFAULT_SEED) -> CriterionResult:
    """MC discount factors against the input curve at t in {1, 2, 5, 10}."""
    m = smile_model()
    times = [1.0, 2.0, 5.0, 10.0]
    cfg = McConfig(paths=paths, seed=seed, workers=_workers())
    est, se = mc_discount(m, times, cfg)
    D = m.discount(np.array(times))
    z = (est - D) / se
    ok = bool(np.all(np.abs(z) <= 3.0))
    # Richardson estimate of the trapezoid bias at the default step, from a run at twice the steps
    fine, _ = mc_discount(m, times, replace(cfg, steps_per_year=2 * cfg.steps_per_year))
    bias = (est - fine) * 4.0 / 3.0
    detail = ", ".join(f"t={t:g}: {zz:+.1f} SE" for t, zz in zip(times, z))
    detail += f" (tol 3 SE, {paths} paths); step bias max {np.max(np.abs(bias / se)):.1f} SE"
    return CriterionResult(2, "no-arbitrage drift", ok, detail,
                           {"times": times, "mc": est.tolist(), "se": se.tolist(),
                            "discount": D.tolist(), "n_se": z.tolist(),
                            "step_bias": bias.tolist()})


def _oracle_grid(m, paths, seed):
    rows = []
    for T1, T2 in PERIODS:
        insts = grid_instruments(T1, T2)
        mc, se = mc_price_many(m, insts, McConfig(paths=paths, seed=seed, workers=_workers()))
        for inst, p, s in zip(insts, mc, se):
            rows.append((inst, price(m, inst).pv, float(p), float(s)))
    return rows


def _scaled_gap(rows):
    """Mean |analytic - MC| in units of the ATM (K = 2%) analytic PV of the same kind and period."""
    atm = {(r[0].kind, r[0].times[0]): r[1] for r in rows if r[0].strike == 0.02}
    return float(np.mean([abs(a - p) / atm[(inst.kind, inst.times[0])] for inst, a, p, _ in rows]))


@_timed
def criterion_3(paths: int = FULL_PATHS, seed: int = DEFAULT_SEED) -> CriterionResult:
    """Analytic prices against MC, plus the gap scaling when sigma is halved."""
    rows = _oracle_grid(smile_model(), paths, seed)
    bad = []
    for inst, a, p, s in rows:
        if abs(a - p) > max(3.0 * s, 1e-2 * abs(p)):
            bad.append(f"{inst.id} rel {(a - p) / p:+.2e} ({(a - p) / s:+.1f} SE)")
    half = _oracle_grid(smile_model(0.5 * SIGMA), paths, seed)
    g1, g2 = _scaled_gap(rows), _scaled_gap(half)
    expo = math.log2(g1 / g2)
    ok_scale = abs(expo - 2.0) <= 0.4
    passed = not bad and ok_scale
    detail = (f"{len(rows) - len(bad)}/{len(rows)} within max(3 SE, 1e-2 PV); "
              f"gap exponent {expo:.2f} (want 2.0 +/- 0.4)")
    if bad:
        detail += "; outside: " + "; ".join(bad)
    return CriterionResult(3, "oracle agreement", passed, detail,
                           {"rows": [(i.id, a, p, s) for i, a, p, s in rows],
                            "rows_half_sigma": [(i.id, a, p, s) for i, a, p, s in half],
                            "gap": g1, "gap_half_sigma": g2, "exponent": expo})


NEAR_ATM = 0.5


@_timed
def criterion_4() -> CriterionResult:
    """Effective-variance prices against the direct asymptotic prices, and the quadratic law."""
    m = smile_model()
    worst = 0.0
    checked = []
    for T1, T2 in PERIODS:
        for inst in grid_instruments(T1, T2):
            ev = effective_variance(m, inst)
            if abs(ev.moneyness) > NEAR_ATM:
                continue
            direct = price(m, inst).pv
            rel = abs(hw_baseline_price(m, inst, ev.total) - direct) / direct
            worst = max(worst, rel)
            checked.append((inst.id, ev.moneyness, rel))
    fit_worst = 0.0
    for T1, T2 in PERIODS:
        for libor in (False, True):
            ds, vs = [], []
            for K in np.linspace(0.01, 0.03, 5):
                ev = effective_variance(m, InstrumentSpec.caplet(T1, T2, float(K), libor=libor))
                ds.append(ev.moneyness)
                vs.append(ev.total)
            ds, vs = np.array(ds), np.array(vs)
            coef = np.polyfit(ds, vs, 2)
            fit_worst = max(fit_worst, float(np.max(np.abs(np.polyval(coef, ds) - vs)) / vs.mean()))
    passed = worst <= 1e-2 and fit_worst < 1e-14 and len(checked) > 0
    return CriterionResult(4, "effective-variance matching", passed,
                           f"max rel diff {worst:.2e} over {len(checked)} near-ATM prices (|d2|<={NEAR_ATM}, "
                           f"tol 1e-2); quadratic-fit residual {fit_worst:.1e} (tol 1e-14)",
                           {"checked": checked, "max_rel": worst, "fit_residual": fit_worst})


def random_model(rng: np.random.Generator, horizon: float = 8.0) -> ModelParams:
    """Piecewise-constant parameters with 1-3 pieces in the ranges used by the checks."""
    def curve(lo, hi):
        n = int(rng.integers(1, 4))
        bp = np.concatenate([[0.0], np.sort(rng.uniform(0.3, horizon - 0.5, n - 1))])
        return PiecewiseCurve(bp, rng.uniform(lo, hi, n))

    gamma = curve(10.0, 100.0)
    gy = curve(-0.3, 0.3)
    ystar = PiecewiseCurve(np.union1d(gamma.breakpoints, gy.breakpoints),
                           gy(np.union1d(gamma.breakpoints, gy.breakpoints))
                           / gamma(np.union1d(gamma.breakpoints, gy.breakpoints)))
    rate = float(rng.uniform(0.0, 0.04))
    return ModelParams(curve(0.004, 0.015), curve(0.05, 0.3), gamma, ystar,
                       DiscountCurve.flat(rate), horizon=horizon)


@_timed
def criterion_5(n_sets: int = 20, seed: int = DEFAULT_SEED) -> CriterionResult:
    """B+ integral identity and the two forms of R1* on random parameter sets."""
    rng = np.random.default_rng(seed)
    id_worst = 0.0
    r1_worst = 0.0
    for _ in range(n_sets):
        m = random_model(rng)
        eng = _engine(m, None)
        t = float(rng.uniform(0.0, 3.0))
        v = float(t + rng.uniform(0.2, 4.0))
        tab = eng.table(t)
        lhs = integrate(lambda u: b_plus(m, t, u, v) * tab.psi(u) * tab.sigma_rr(u), t, v,
                        m.breakpoints, eng.spec)
        rhs = 0.5 * float(tab.sigma_zz(v))
        id_worst = max(id_worst, abs(lhs - rhs) / abs(rhs))
        tt = float(rng.uniform(0.1, 7.0))
        a, b = r1_star(m, tt, form="sinh"), r1_star(m, tt, form="pm")
        r1_worst = max(r1_worst, abs(a - b) / abs(a))
    passed = id_worst <= 1e-9 and r1_worst <= 1e-12
    return CriterionResult(5, "B+ identity and R1* forms", passed,
                           f"identity max rel {id_worst:.1e} (tol 1e-9); R1* forms max rel {r1_worst:.1e} "
                           f"(tol 1e-12); {n_sets} sets",
                           {"identity": id_worst, "r1_forms": r1_worst})


@_timed
def criterion_6() -> CriterionResult:
    """Synthetic calibration round trip: 3 maturities x 5 strikes."""
    gamma, gy = 80.0, 0.3
    truth = ModelParams.constant(SIGMA, ALPHA, gamma, gy / gamma, rate=RATE, horizon=5.0)
    strikes = [0.01, 0.015, 0.02, 0.025, 0.03]
    quotes = synthetic_quotes(truth, [1.5, 3.0, 5.0], strikes)
    rep = calibrate(quotes, truth.discount, ALPHA)
    errs = np.concatenate([rep.sigma.values / SIGMA - 1, rep.gamma.values / gamma - 1,
                           rep.y_star.values / (gy / gamma) - 1])
    perr = float(np.max(np.abs(errs)))
    vols = np.array([q.implied_vol for q in quotes.quotes])
    verr = float(np.max(np.abs(repriced_vols(rep, quotes) - vols)))
    passed = perr < 1e-6 and verr < 1e-8 and rep.converged
    return CriterionResult(6, "calibration round trip", passed,
                           f"max param rel err {perr:.1e} (tol 1e-6); max vol err {verr:.1e} (tol 1e-8)",
                           {"param_err": perr, "vol_err": verr})


@_timed
def criterion_7() -> CriterionResult:
    """Shape checks: term/compounded gap against T1, forward rate against y."""
    m = smile_model(horizon=12.0)
    starts = [0.25, 0.5, 1.0, 2.0, 5.0, 10.0]
    gaps = []
    for T1 in starts:
        inst_c = InstrumentSpec.caplet(T1, T1 + 0.5, RATE)
        inst_l = InstrumentSpec.caplet(T1, T1 + 0.5, RATE, libor=True)
        gaps.append(abs(price(m, inst_c).pv - price(m, inst_l).pv))
    gap_ok = all(a > b for a, b in zip(gaps, gaps[1:]))
    sd = math.sqrt(float(_engine(m, None).table(0.0).sigma_rr(1.0)))
    h = 0.05 * sd
    f = lambda y: forward_rate(m, y, 1.0, 2.0)
    slope0 = (f(h) - f(-h)) / (2 * h)

    def curv(y):
        return (f(y + h) - 2 * f(y) + f(y - h)) / (h * h)

    lin_dev = max(abs(f(s) - f(0.0) - slope0 * s) / abs(slope0 * s) for s in (0.25 * sd, -0.25 * sd))
    ys = np.linspace(-4 * sd, 4 * sd, 17)
    fs = np.array([f(y) for y in ys])
    monotone = bool(np.all(np.diff(fs) > 0))
    convex_hi, concave_lo = curv(3 * sd) > 0, curv(-3 * sd) < 0
    growth = abs(curv(3 * sd)) > abs(curv(0.0))
    fwd_ok = monotone and convex_hi and concave_lo and growth and lin_dev < 0.05
    return CriterionResult(7, "qualitative shapes", gap_ok and fwd_ok,
                           f"gap decreasing in T1: {gap_ok}; forward monotone {monotone}, "
                           f"linear near 0 (dev {lin_dev:.1e}), convex above {convex_hi}, "
                           f"concave below {concave_lo}",
                           {"starts": starts, "gaps": gaps, "linear_dev": lin_dev})


@_timed
def criterion_8() -> CriterionResult:
    """Kernel cross-pricer against the closed-form compounded caplet."""
    m = smile_model()
    worst = 0.0
    rows = []
    for T1, T2 in PERIODS:
        for K in STRIKES:
            inst = InstrumentSpec.caplet(T1, T2, K)
            k = kernel_price_rfr_caplet(m, inst)
            a = price(m, inst).pv
            rel = abs(k - a) / a
            worst = max(worst, rel)
            rows.append((T1, T2, K, k, a, rel))
    return CriterionResult(8, "kernel cross-pricer", worst <= 1e-2,
                           f"max rel diff {worst:.2e} (tol 1e-2) over {len(rows)} caplets",
                           {"rows": rows, "max_rel": worst})


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}
RUNTIME_LIMITS = {1: 10.0, 2: 300.0, 3: 900.0, 5: 30.0, 6: 120.0}


def run_criterion(n: int, paths: int | None = None, seed: int = DEFAULT_SEED) -> CriterionResult:
    fn = CRITERIA[n]
    if n in (2, 3):
        res = fn(paths=paths or FULL_PATHS, seed=seed)
    elif n == 5:
        res = fn(seed=seed)
    else:
        res = fn()
    limit = RUNTIME_LIMITS.get(n)
    if limit is not None and res.seconds > limit:
        res.passed = False
        res.detail += f"; runtime {res.seconds:.1f}s over {limit:.0f}s"
    return res


def run_all(quick: bool = False, paths: int | None = None, seed: int = DEFAULT_SEED, only=None):
    paths = paths or (QUICK_PATHS if quick else FULL_PATHS)
    return [run_criterion(n, paths, seed) for n in (only or sorted(CRITERIA))]
