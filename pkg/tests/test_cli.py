import csv
import hashlib
import json
import math
import shlex
import subprocess
import sys

import numpy as np
import pytest

from sinhrates import InstrumentSpec, ModelParams, load_model, save_model
from sinhrates.cli import EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, PRICE_COLUMNS, main, read_instruments
from sinhrates.implied import effective_variance
from sinhrates.termstructure import InputFormatError
from sinhrates.validation import smile_model

HEADER = "id,kind,T0,T1,T2,strike,delta1,delta2\n"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_model(smile_model(), d / "smile")
    save_model(ModelParams.constant(0.0, 0.15, 50.0, 0.0), d / "flat0")
    save_model(ModelParams.constant(0.01, 0.15, 1e-8, 0.0), d / "hw")
    (d / "inst.csv").write_text(HEADER + "c1,rfr_caplet,1,1.5,,0.02,,\n"
                                         "l1,libor_caplet,1,1.5,,0.02,,\n"
                                         "s1,payer_swaption,1,1.5,2,0.02,0.5,0.5\n")
    return d


def test_model_directory_round_trip(tmp_path):
    m = smile_model()
    save_model(m, tmp_path)
    back = load_model(tmp_path)
    for name in ("sigma", "alpha", "gamma", "y_star"):
        assert np.array_equal(getattr(back, name).values, getattr(m, name).values)
    (tmp_path / "gamma.csv").unlink()
    with pytest.raises(InputFormatError, match="gamma.csv"):
        load_model(tmp_path)


def test_instrument_file_parsing(work, tmp_path):
    insts = read_instruments(work / "inst.csv")
    assert [i.kind for i in insts] == ["rfr_caplet", "libor_caplet", "payer_swaption"]
    assert insts[2].times == (1.0, 1.5, 2.0) and insts[0].deltas == (0.5,)
    p = tmp_path / "x.csv"
    p.write_text("id,kind,T0,T1,strike,daycount_fraction\na,rfr_caplet,1,1.5,0.02,0.51\n")
    assert read_instruments(p)[0].deltas == (0.51,)
    for body, line in [("a,cap,1,1.5,0.02,\n", ":2"), ("a,rfr_caplet,1.5,1,0.02,\n", ":2"),
                       ("a,rfr_caplet,1,1.5\n", ":2")]:
        p.write_text("id,kind,T0,T1,strike,daycount_fraction\n" + body)
        with pytest.raises(InputFormatError, match=line):
            read_instruments(p)
    p.write_text("kind,id,T0,T1,strike\n")
    with pytest.raises(InputFormatError, match=":1"):
        read_instruments(p)


def test_price_command(work, tmp_path):
    assert main(["price", "--model", str(work / "smile"), "--instruments", str(work / "inst.csv"),
                 "--out", str(tmp_path)]) == EXIT_OK
    out = rows(tmp_path / "prices.csv")
    assert list(out[0]) == PRICE_COLUMNS
    assert [r["instrument_id"] for r in out] == ["c1", "l1", "s1"]
    for r in out:
        assert float(r["pv"]) == pytest.approx(float(r["order0"]) + float(r["order1"]), rel=1e-14)
        assert 0.005 < float(r["implied_hw_vol"]) < 0.02


def test_zero_vol_caplet_prices_intrinsic(work, tmp_path):
    (tmp_path / "one.csv").write_text("id,kind,T0,T1,strike\nc,rfr_caplet,1,1.5,0.01\n")
    assert main(["price", "--model", str(work / "flat0"), "--instruments", str(tmp_path / "one.csv"),
                 "--out", str(tmp_path)]) == EXIT_OK
    r = rows(tmp_path / "prices.csv")[0]
    kappa = InstrumentSpec.caplet(1, 1.5, 0.01).kappa
    assert float(r["pv"]) == pytest.approx(math.exp(-0.02) - math.exp(-0.03) / kappa, rel=1e-14)
    assert r["implied_hw_vol"] == "0.0"


def test_price_with_oracle_columns(work, tmp_path):
    args = ["price", "--model", str(work / "smile"), "--instruments", str(work / "inst.csv"),
            "--mc", "--paths", "20000", "--steps-per-year", "100", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    out = rows(tmp_path / "a" / "prices.csv")
    assert {"mc_pv", "mc_se", "mc_within_3se"} <= set(out[0])
    assert all(r["mc_within_3se"] == "true" for r in out)
    assert (tmp_path / "a" / "prices.csv").read_bytes() == (tmp_path / "b" / "prices.csv").read_bytes()


def test_empty_instrument_file(work, tmp_path):
    (tmp_path / "e.csv").write_text("id,kind,T0,T1,strike\n")
    assert main(["price", "--model", str(work / "smile"), "--instruments", str(tmp_path / "e.csv"),
                 "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "prices.csv").read_text() == ",".join(PRICE_COLUMNS) + "\n"


def test_input_errors(work, tmp_path, caplog):
    (tmp_path / "bad.csv").write_text("id,kind,T0,T1,strike\nx,rfr_caplet,1,oops,0.02\n")
    assert main(["price", "--model", str(work / "smile"), "--instruments", str(tmp_path / "bad.csv"),
                 "--out", str(tmp_path)]) == EXIT_INPUT
    assert "bad.csv:2" in caplog.text
    assert main(["price", "--model", str(tmp_path / "none"), "--instruments", str(work / "inst.csv"),
                 "--out", str(tmp_path)]) == EXIT_INPUT
    assert main(["price", "--model", str(work / "smile"), "--out", str(tmp_path)]) == EXIT_INPUT
    assert main(["price", "--model", str(work / "smile"), "--instruments", str(work / "inst.csv"),
                 "--out", str(tmp_path), "--paths", "1"]) == EXIT_INPUT


def test_numerical_failure_exit_code(tmp_path):
    save_model(ModelParams.constant(0.02, 0.15, 150.0, 0.002), tmp_path / "wild")
    (tmp_path / "one.csv").write_text("id,kind,T0,T1,strike\nx,rfr_caplet,5,5.5,0.02\n")
    assert main(["price", "--model", str(tmp_path / "wild"), "--instruments", str(tmp_path / "one.csv"),
                 "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_manifest_reproduces_outputs(work, tmp_path):
    out = tmp_path / "run"
    assert main(["price", "--model", str(work / "smile"), "--instruments", str(work / "inst.csv"),
                 "--out", str(out), "--tol", "1e-9"]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "price" and man["settings"]["tol"] == 1e-9
    assert str(work / "smile" / "sigma.csv") in man["inputs"]
    digest = man["outputs"][str(out / "prices.csv")]
    assert digest == hashlib.sha256((out / "prices.csv").read_bytes()).hexdigest()
    # rebuild the command line from the recorded settings
    s = man["settings"]
    again = tmp_path / "again"
    argv = ["price", "--model", s["model"], "--instruments", s["instruments"], "--out", str(again),
            "--tol", str(s["tol"]), "--seed", str(s["seed"]), "--paths", str(s["paths"]),
            "--steps-per-year", str(s["steps_per_year"])]
    assert main(argv) == EXIT_OK
    assert hashlib.sha256((again / "prices.csv").read_bytes()).hexdigest() == digest


def test_surface_flat_without_smile(work, tmp_path):
    assert main(["surface", "--model", str(work / "hw"), "--out", str(tmp_path)]) == EXIT_OK
    out = rows(tmp_path / "surface.csv")
    assert list(out[0]) == ["maturity", "strike", "implied_vol", "effective_variance", "eps_diagnostic"]
    for T in {r["maturity"] for r in out}:
        vols = [float(r["implied_vol"]) for r in out if r["maturity"] == T]
        assert np.ptp(vols) < 1e-9


def test_surface_is_quadratic_in_moneyness(work, tmp_path):
    assert main(["surface", "--model", str(work / "smile"), "--out", str(tmp_path), "--compare-libor"]) == EXIT_OK
    out = rows(tmp_path / "surface.csv")
    assert {"libor_implied_vol", "libor_effective_variance", "pv", "libor_pv"} <= set(out[0])
    m = smile_model()
    for T in sorted({float(r["maturity"]) for r in out}):
        sub = [r for r in out if float(r["maturity"]) == T]
        d = [effective_variance(m, InstrumentSpec.caplet(T - 0.5, T, float(r["strike"]))).moneyness for r in sub]
        v = np.array([float(r["effective_variance"]) for r in sub])
        fit = np.polyfit(d, v, 2)
        assert np.max(np.abs(np.polyval(fit, d) - v)) < 1e-14 * v.max() + 1e-20


def test_forwards_command(work, tmp_path):
    assert main(["forwards", "--model", str(work / "smile"), "--out", str(tmp_path)]) == EXIT_OK
    out = rows(tmp_path / "forwards.csv")
    assert list(out[0]) == ["t", "y", "forward_rate", "hw_forward_rate"]
    for t in {r["t"] for r in out}:
        f = np.array([float(r["forward_rate"]) for r in out if r["t"] == t])
        assert np.all(np.diff(f) > 0)


def test_validate_reports(tmp_path, capsys):
    assert main(["validate", "--criteria", "1,5", "--out", str(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and all("PASS" in ln for ln in lines)
    report = json.loads((tmp_path / "validation.json").read_text())
    assert [r["criterion"] for r in report] == [1, 5] and all(r["passed"] for r in report)


def test_validate_failure_exit_code(tmp_path):
    # criterion 4 misses its tolerance at T1 = 5 (see the acceptance suite)
    assert main(["validate", "--criteria", "4"]) == EXIT_VALIDATION


def test_validate_rejects_corrupt_model(work, tmp_path, capsys):
    bad = tmp_path / "bad"
    save_model(smile_model(), bad)
    (bad / "sigma.csv").write_text("garbage\n")
    assert main(["validate", "--model", str(bad), "--criteria", "1"]) == EXIT_INPUT
    assert "criterion" not in capsys.readouterr().out


def test_console_script(work, tmp_path):
    cmd = f"{sys.executable} -m sinhrates.cli forwards --model {shlex.quote(str(work / 'smile'))} --out {tmp_path}"
    assert subprocess.run(shlex.split(cmd), capture_output=True).returncode == 0
    assert subprocess.run([sys.executable, "-m", "sinhrates.cli", "nope"], capture_output=True).returncode == 2
