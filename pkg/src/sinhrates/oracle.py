"""Monte Carlo reference pricer for the sinh short-rate model.

y is advanced with the exact Ornstein-Uhlenbeck transition (closed-form decay
and variance over each step, valid across parameter breakpoints). z picks up
the drift R* exactly from its running integral and the sinh term by the
trapezoid rule, so the step size only affects that trapezoid.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernelmath import _engine
from .pricing import InstrumentSpec, zcb_price

BLOCK_PATHS = 8192


@dataclass(frozen=True)
class McConfig:
    paths: int = 100_000
    steps_per_year: int = 365
    seed: int = 0
    antithetic: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.paths < 2:
            raise ValueError("need at least two paths")
        if self.steps_per_year < 1:
            raise ValueError("steps_per_year must be positive")


@dataclass
class PathEnsemble:
    times: np.ndarray
    y: np.ndarray
    z: np.ndarray


def time_grid(m, horizon: float, steps_per_year: int, extra: Sequence[float] = ()) -> np.ndarray:
    n = max(1, int(math.ceil(horizon * steps_per_year - 1e-9)))
    grid = np.linspace(0.0, horizon, n + 1)
    pts = [p for p in list(extra) + list(m.breakpoints) if 0.0 < p < horizon]
    return np.unique(np.concatenate([grid, pts]))


class _Stepper:
    """Per-step constants of the exact scheme on a fixed grid."""

    def __init__(self, m, grid: np.ndarray):
        eng = _engine(m, None)
        lo, hi = grid[:-1], grid[1:]
        self.grid = grid
        self.decay = eng.phi(lo, hi)
        self.sd = np.sqrt(eng.sigma_rr(lo, hi))
        mid = 0.5 * (lo + hi)
        self.gamma = m.gamma(mid)
        self.ystar = m.y_star(mid)
        self.half_h = 0.5 * (hi - lo)
        cum = m.drift.int_r_star(grid)
        self.drift = np.diff(cum)

    def run(self, normals_fn: Callable[[int], np.ndarray], n: int, observe_idx: np.ndarray):
        y = np.zeros(n)
        z = np.zeros(n)
        ys = np.empty((len(observe_idx), n))
        zs = np.empty((len(observe_idx), n))
        pos = {int(k): j for j, k in enumerate(observe_idx)}
        if 0 in pos:
            ys[pos[0]] = 0.0
            zs[pos[0]] = 0.0
        g0 = self.gamma
        for i in range(len(self.decay)):
            g, s = g0[i], self.ystar[i]
            f0 = np.sinh(g * (y + s))
            y = self.decay[i] * y + self.sd[i] * normals_fn(n)
            z += self.drift[i] + self.half_h[i] * (f0 + np.sinh(g * (y + s))) / g
            j = pos.get(i + 1)
            if j is not None:
                ys[j] = y
                zs[j] = z
        return ys, zs


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _block_sizes(cfg: McConfig) -> list[int]:
    total = cfg.paths + (cfg.paths % 2 if cfg.antithetic else 0)
    sizes = [BLOCK_PATHS] * (total // BLOCK_PATHS)
    if total % BLOCK_PATHS:
        sizes.append(total % BLOCK_PATHS)
    return sizes


def _simulate_block(stepper: _Stepper, cfg: McConfig, block: int, size: int, observe_idx):
    rng = _block_rng(cfg.seed, block)
    if cfg.antithetic:
        half = size // 2

        def normals(n):
            e = rng.standard_normal(half)
            return np.concatenate([e, -e])
    else:
        def normals(n):
            return rng.standard_normal(n)
    return stepper.run(normals, size, observe_idx)


def simulate_paths(m, horizon: float, cfg: McConfig, observe: Sequence[float] | None = None) -> PathEnsemble:
    """All paths at ``observe`` times (default: every grid time). Memory grows with paths x times."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    extra = [] if observe is None else list(observe)
    grid = time_grid(m, horizon, cfg.steps_per_year, extra)
    obs = grid if observe is None else np.asarray(sorted(set(float(t) for t in observe)))
    idx = np.searchsorted(grid, obs)
    stepper = _Stepper(m, grid)
    ys, zs = [], []
    for b, size in enumerate(_block_sizes(cfg)):
        y, z = _simulate_block(stepper, cfg, b, size, idx)
        ys.append(y)
        zs.append(z)
    return PathEnsemble(obs, np.concatenate(ys, axis=1), np.concatenate(zs, axis=1))


def _pair(values: np.ndarray, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return values
    half = values.shape[-1] // 2
    return 0.5 * (values[..., :half] + values[..., half:])


def _combine(parts):
    """Chan's pairwise update of (count, mean, M2) applied in block order."""
    n, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        tot = n + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta * delta * (n * nb / tot)
        n = tot
    return n, mean, m2


def mc_estimate(m, observe: Sequence[float], payoff: Callable[[np.ndarray, np.ndarray], np.ndarray],
                cfg: McConfig, horizon: float | None = None):
    """Means and standard errors of ``payoff(y_obs, z_obs)``.

    ``payoff`` receives arrays of shape (len(observe), n) and returns shape
    (k, n) or (n,). Antithetic pairs are averaged before the variance is taken.
    """
    obs = np.asarray(sorted(set(float(t) for t in observe)))
    if obs.size == 0 or obs[0] <= 0:
        raise ValueError("observation times must be positive")
    horizon = float(obs[-1]) if horizon is None else horizon
    grid = time_grid(m, horizon, cfg.steps_per_year, obs)
    idx = np.searchsorted(grid, obs)
    stepper = _Stepper(m, grid)
    sizes = _block_sizes(cfg)

    def one(b):
        y, z = _simulate_block(stepper, cfg, b, sizes[b], idx)
        vals = np.atleast_2d(np.asarray(payoff(y, z), dtype=float))
        v = _pair(vals, cfg.antithetic)
        mean = v.mean(axis=1)
        return v.shape[1], mean, ((v - mean[:, None]) ** 2).sum(axis=1)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(one, range(len(sizes))))
    else:
        parts = [one(b) for b in range(len(sizes))]
    n, mean, m2 = _combine(parts)
    se = np.sqrt(m2 / (n - 1) / n)
    return mean, se


def mc_discount(m, times: Sequence[float], cfg: McConfig):
    """E[exp(-int_0^t r)] for each t, as (estimates, standard errors)."""
    times = np.asarray(sorted(set(float(t) for t in times)))
    D = m.discount(times)
    mean, se = mc_estimate(m, times, lambda y, z: np.exp(-z), cfg)
    return D * mean, D * se


def _bond_table(m, T0: float, maturities: Sequence[float], span: float, order: int = 2, n: int = 48):
    """Chebyshev fits of y -> F^T(y, T0) on [-span, span] for each maturity."""
    k = np.arange(n)
    ys = span * np.cos(np.pi * (k + 0.5) / n)
    fits = []
    for T in maturities:
        vals = np.array([zcb_price(m, float(y), T0, T, order=order) for y in ys])
        fits.append(np.polynomial.chebyshev.Chebyshev.fit(ys, np.log(vals), n - 1, domain=[-span, span]))

    def bonds(y):
        yy = np.clip(y, -span, span)
        return np.array([np.exp(f(yy)) for f in fits])

    return bonds


def _payoff(m, inst: InstrumentSpec):
    """(observation times, f(obs) -> discounted payoff) where obs maps time -> (y, z)."""
    T = inst.times
    if inst.kind == "rfr_caplet":
        T1, T2 = T
        D12 = float(m.discount(T2) / m.discount(T1))
        inv_k = 1.0 / inst.kappa
        D2 = float(m.discount(T2))

        def f(obs):
            z1, z2 = obs[T1][1], obs[T2][1]
            return D2 * np.exp(-z2) * np.maximum(np.exp(z2 - z1) / D12 - inv_k, 0.0)

        return (T1, T2), f
    T0 = T[0]
    sd = math.sqrt(float(_engine(m, None).table(0.0).sigma_rr(T0)))
    bonds = _bond_table(m, T0, T[1:], max(12.0 * sd, 1e-6))
    if inst.kind == "libor_caplet":
        inv_k = 1.0 / inst.kappa
        T1, T2 = T
        D2 = float(m.discount(T2))

        def f(obs):
            y1, z2 = obs[T1][0], obs[T2][1]
            return D2 * np.exp(-z2) * np.maximum(1.0 / bonds(y1)[0] - inv_k, 0.0)

        return (T1, T2), f
    w = inst.strike * np.asarray(inst.deltas)
    w[-1] += 1.0
    D0 = float(m.discount(T0))

    def f(obs):
        y0, z0 = obs[T0]
        return D0 * np.exp(-z0) * np.maximum(1.0 - w @ bonds(y0), 0.0)

    return (T0,), f


def mc_price_many(m, insts: Sequence[InstrumentSpec], cfg: McConfig):
    """Price several instruments on one set of paths; returns (pvs, ses) arrays."""
    built = [_payoff(m, inst) for inst in insts]
    times = sorted({float(t) for obs, _ in built for t in obs})

    def payoff(y, z):
        obs = {t: (y[j], z[j]) for j, t in enumerate(times)}
        return np.array([f(obs) for _, f in built])

    mean, se = mc_estimate(m, times, payoff, cfg)
    return mean, se


def mc_price(m, inst: InstrumentSpec, cfg: McConfig) -> tuple[float, float]:
    """Discounted payoff expectation of ``inst`` and its standard error."""
    mean, se = mc_price_many(m, [inst], cfg)
    return float(mean[0]), float(se[0])
