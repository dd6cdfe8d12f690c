"""Command-line entry point: price, calibrate, surface, forwards, validate.

Exit codes: 0 ok, 1 validation failure, 2 input error, 3 numerical error.
Every command writes ``manifest.json`` next to its outputs with the effective
settings and SHA-256 digests of inputs and outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .implied import (NegativeVarianceError, SingularAdjustmentError, effective_variance,
                      hw_baseline_price, implied_hw_vol, implied_vol_from_variance)
from .marketcal import QuoteSurface, calibrate
from .model import ModelParams, load_model
from .numerics import (DEFAULT_QUADRATURE, BracketError, DegenerateCovarianceError, QuadratureError)
from .oracle import McConfig, mc_price_many
from .pricing import KINDS, InstrumentSpec, forward_rate, price
from .termstructure import DomainError, InputFormatError, PiecewiseCurve, read_curve_csv, read_discount_csv

log = logging.getLogger("sinhrates")

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
NUMERICAL_ERRORS = (QuadratureError, BracketError, DegenerateCovarianceError, NegativeVarianceError,
                    SingularAdjustmentError, FloatingPointError, ArithmeticError)
PRICE_COLUMNS = ["instrument_id", "pv", "order0", "order1", "effective_variance", "implied_hw_vol"]


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _inputs(paths):
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.csv")) if p.is_dir() else [p]
        for f in files:
            if f.is_file():
                out[str(f)] = _digest(f)
    return out


def _version() -> str:
    try:
        return metadata.version("sinhrates")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir: Path, args, inputs, outputs, extra=None) -> Path:
    settings = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "command": args.command,
        "version": _version(),
        "settings": {k: (str(v) if isinstance(v, Path) else v) for k, v in settings.items()},
        "inputs": _inputs(inputs),
        "outputs": {str(p): _digest(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def _quadrature(args):
    if args.tol is None:
        return DEFAULT_QUADRATURE
    if not args.tol > 0:
        raise InputFormatError("--tol must be positive")
    return replace(DEFAULT_QUADRATURE, rel_tol=args.tol)


def _model(args, horizon: float) -> ModelParams:
    if args.model is None:
        raise InputFormatError("--model <dir> is required")
    m = load_model(args.model, horizon=horizon)
    return m.replace(quadrature=_quadrature(args))


def _out_dir(args) -> Path:
    if args.out is None:
        raise InputFormatError("--out <dir> is required")
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def read_instruments(path) -> list[InstrumentSpec]:
    """Instrument CSV with header ``id,kind,T0,...,TN,strike[,fraction columns]``.

    Caplets use T0 (start) and T1 (end); unused time columns are left empty.
    Every column after ``strike`` is a daycount fraction (any names); left
    empty they default to the period lengths.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputFormatError(f"{path}:1: empty file")
        header = [h.strip() for h in header]
        tcols = [i for i, h in enumerate(header) if h.startswith("T") and h[1:].isdigit()]
        if header[:2] != ["id", "kind"] or not tcols or "strike" not in header:
            raise InputFormatError(f"{path}:1: expected header id,kind,T0,...,TN,strike[,daycount fractions]")
        if [header[i] for i in tcols] != [f"T{k}" for k in range(len(tcols))]:
            raise InputFormatError(f"{path}:1: time columns must be T0, T1, ... in order")
        k_col = header.index("strike")
        if k_col != tcols[-1] + 1:
            raise InputFormatError(f"{path}:1: strike must follow the last time column")
        dcols = list(range(k_col + 1, len(header)))
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            cells = [c.strip() for c in row]
            kind = cells[1]
            if kind not in KINDS:
                raise InputFormatError(f"{path}:{lineno}: unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
            try:
                times = [float(cells[i]) for i in tcols if cells[i]]
                strike = float(cells[k_col])
                deltas = [float(cells[i]) for i in dcols if cells[i]]
            except ValueError:
                raise InputFormatError(f"{path}:{lineno}: non-numeric field in {row}") from None
            try:
                if kind == "payer_swaption":
                    inst = InstrumentSpec.swaption(times, strike, deltas or None, id=cells[0])
                else:
                    if len(times) != 2:
                        raise DomainError("a caplet needs exactly T0 and T1")
                    inst = InstrumentSpec.caplet(times[0], times[1], strike, libor=kind == "libor_caplet",
                                                 delta=deltas[0] if deltas else None, id=cells[0])
            except (ValueError, DomainError) as exc:
                raise InputFormatError(f"{path}:{lineno}: {exc}") from None
            out.append(inst)
    return out


def cmd_price(args) -> int:
    out = _out_dir(args)
    insts = read_instruments(args.instruments) if args.instruments else None
    if insts is None:
        raise InputFormatError("--instruments <csv> is required")
    horizon = max([i.times[-1] for i in insts], default=1.0)
    m = _model(args, horizon)
    qspec = m.quadrature
    rows = []
    for inst in insts:
        res = price(m, inst, qspec)
        try:
            ev = effective_variance(m, inst, qspec).total
        except (NegativeVarianceError, SingularAdjustmentError, DomainError, BracketError) as exc:
            log.warning("%s: no effective variance (%s)", inst.id, exc)
            ev = float("nan")
        try:
            vol = implied_hw_vol(m, inst, res.pv, qspec)
        except BracketError as exc:
            log.warning("%s: implied vol not attainable (%s)", inst.id, exc)
            vol = float("nan")
        rows.append([inst.id, res.pv, res.order0, res.order1, ev, vol])
    header = list(PRICE_COLUMNS)
    if args.mc:
        header += ["mc_pv", "mc_se", "mc_within_3se"]
        if insts:
            cfg = McConfig(paths=args.paths, steps_per_year=args.steps_per_year, seed=args.seed)
            pv, se = mc_price_many(m, insts, cfg)
            for r, p, s in zip(rows, pv, se):
                r += [p, s, str(abs(r[1] - p) <= 3.0 * s).lower()]
    path = _write_csv(out / "prices.csv", header, rows)
    write_manifest(out, args, [args.model, args.instruments], [path])
    return EXIT_OK


def cmd_calibrate(args) -> int:
    out = _out_dir(args)
    if args.quotes is None:
        raise InputFormatError("--quotes <csv> is required")
    quotes = QuoteSurface.from_csv(args.quotes)
    if args.model is None:
        raise InputFormatError("--model <dir> is required (discount.csv, optional alpha.csv)")
    mdir = Path(args.model)
    dc = read_discount_csv(mdir / "discount.csv")
    alpha = 0.15
    if (mdir / "alpha.csv").is_file():
        a = read_curve_csv(mdir / "alpha.csv")
        if a.values.size != 1 and np.ptp(a.values) > 0:
            raise InputFormatError(f"{mdir / 'alpha.csv'}: calibration needs a constant alpha")
        alpha = float(a.values[0])
    rep = calibrate(quotes, dc, alpha, _quadrature(args), libor=args.libor)
    paths = rep.write(out)
    write_manifest(out, args, [args.quotes, mdir / "discount.csv", mdir / "alpha.csv"], paths,
                   {"converged": rep.converged, "max_abs_residual": rep.max_abs_residual()})
    for b in rep.buckets:
        if not b.converged:
            log.error("bucket %g did not converge: %s", b.maturity, b.message)
    return EXIT_OK if rep.converged else EXIT_NUMERICAL


DEFAULT_SURFACE_MATURITIES = (1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
DEFAULT_SURFACE_STRIKES = tuple(round(0.005 * k, 4) for k in range(1, 9))
SURFACE_TENOR = 0.5


def _surface_grid(args):
    if args.quotes:
        q = QuoteSurface.from_csv(args.quotes)
        return sorted({(x.maturity, x.tenor) for x in q.quotes}), sorted({x.strike for x in q.quotes})
    return [(T, SURFACE_TENOR) for T in DEFAULT_SURFACE_MATURITIES], list(DEFAULT_SURFACE_STRIKES)


def cmd_surface(args) -> int:
    out = _out_dir(args)
    periods, strikes = _surface_grid(args)
    m = _model(args, max(T for T, _ in periods))
    header = ["maturity", "strike", "implied_vol", "effective_variance", "eps_diagnostic"]
    if args.compare_libor:
        header += ["libor_implied_vol", "libor_effective_variance", "pv", "libor_pv"]
    rows = []
    for T, tenor in periods:
        for K in strikes:
            inst = InstrumentSpec.caplet(T - tenor, T, K)
            ev = effective_variance(m, inst)
            row = [T, K, implied_vol_from_variance(m, inst, ev.total), ev.total, ev.eps_diagnostic]
            if args.compare_libor:
                lib = InstrumentSpec.caplet(T - tenor, T, K, libor=True)
                evl = effective_variance(m, lib)
                row += [implied_vol_from_variance(m, lib, evl.total), evl.total,
                        hw_baseline_price(m, inst, ev.total), hw_baseline_price(m, lib, evl.total)]
            rows.append(row)
    path = _write_csv(out / "surface.csv", header, rows)
    write_manifest(out, args, [args.model] + ([args.quotes] if args.quotes else []), [path],
                   {"tenor": SURFACE_TENOR if not args.quotes else "from quotes"})
    return EXIT_OK


FORWARD_TIMES = (1.0, 2.0, 5.0)
FORWARD_OFFSET = 1.0
FORWARD_POINTS = 41


def cmd_forwards(args) -> int:
    """Forward rate f(y, t, t + 1) against y, next to the gamma -> 0 model with the same sigma."""
    out = _out_dir(args)
    m = _model(args, max(FORWARD_TIMES) + FORWARD_OFFSET)
    hw = m.replace(gamma=PiecewiseCurve.constant(1e-8), y_star=PiecewiseCurve.constant(0.0))
    rows = []
    for t in FORWARD_TIMES:
        sd = math.sqrt(float(m.kernel.table(0.0).sigma_rr(t)))
        for y in np.linspace(-4.0 * sd, 4.0 * sd, FORWARD_POINTS):
            T = t + FORWARD_OFFSET
            rows.append([t, y, forward_rate(m, float(y), t, T), forward_rate(hw, float(y), t, T)])
    path = _write_csv(out / "forwards.csv", ["t", "y", "forward_rate", "hw_forward_rate"], rows)
    write_manifest(out, args, [args.model], [path],
                   {"forward_offset": FORWARD_OFFSET, "y_range_sd": 4.0})
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import run_all
    if args.model is not None:
        load_model(args.model)  # input check only; the criteria use built-in parameter sets
    only = [int(x) for x in args.criteria.split(",")] if args.criteria else None
    results = run_all(quick=args.quick, paths=args.paths_override, seed=args.seed, only=only)
    for r in results:
        print(r.line(), flush=True)
    if args.out is not None:
        out = _out_dir(args)
        path = out / "validation.json"
        path.write_text(json.dumps([r.as_dict() for r in results], indent=2, default=_fmt) + "\n",
                        encoding="utf-8")
        write_manifest(out, args, [args.model] if args.model else [], [path])
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", type=Path, help="directory with sigma/alpha/gamma/y_star/discount CSVs")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--tol", type=float, help="quadrature relative tolerance")
    common.add_argument("--seed", type=int, default=20240611)
    common.add_argument("--paths", type=int, default=100_000, help="Monte Carlo paths")
    common.add_argument("--steps-per-year", type=int, default=365)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sinhrates", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("price", parents=[common], help="price instruments from a CSV")
    sp.add_argument("--instruments", type=Path)
    sp.add_argument("--mc", action="store_true", help="add Monte Carlo columns")
    sp.set_defaults(func=cmd_price)

    sp = sub.add_parser("calibrate", parents=[common], help="fit sigma, gamma, y* to caplet quotes")
    sp.add_argument("--quotes", type=Path)
    sp.add_argument("--libor", action="store_true", help="treat quotes as term-rate caplets")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("surface", parents=[common], help="implied-vol surface grid")
    sp.add_argument("--quotes", type=Path, help="take maturities, tenors and strikes from a quote file")
    sp.add_argument("--compare-libor", action="store_true")
    sp.set_defaults(func=cmd_surface)

    sp = sub.add_parser("forwards", parents=[common], help="forward rate against the factor y")
    sp.set_defaults(func=cmd_forwards)

    sp = sub.add_parser("validate", parents=[common], help="run the acceptance checks")
    sp.add_argument("--quick", action="store_true", help="1e5 Monte Carlo paths")
    sp.add_argument("--criteria", help="comma-separated subset, e.g. 1,4,5")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "validate":
        given = argv if argv is not None else sys.argv[1:]
        args.paths_override = args.paths if "--paths" in given else None
    if args.paths < 2 or args.steps_per_year < 1:
        log.error("--paths must be >= 2 and --steps-per-year >= 1")
        return EXIT_INPUT
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            return args.func(args)
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (InputFormatError, DomainError, FileNotFoundError, IsADirectoryError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
