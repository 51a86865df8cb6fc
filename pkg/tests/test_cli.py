import argparse
import csv
import io
import re
import subprocess
import sys

import pytest

from ecmid import cli
from ecmid.presets import PRESETS

ERROR_LINE = re.compile(r"^error: [A-Za-z]+: .+$")


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_randles_round_trip(tmp_path, capsys):
    data = tmp_path / "d.csv"
    code, _, _ = run(capsys, "simulate", "--model", "randles", "--preset", "paper-mrandles",
                     "--duration", 400, "--out", data)
    assert code == 0
    code, out, _ = run(capsys, "identify", "--model", "randles", "--in", data)
    assert code == 0
    est = {r["name"]: float(r["value"]) for r in rows(out)}
    for k, v in PRESETS["paper-mrandles"].params.items():
        assert est[k] == pytest.approx(v, rel=1e-6)
    assert est["residual_rms"] < 1e-12


def test_thevenin_round_trip(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert run(capsys, "simulate", "--model", "thevenin", "--order", 1, "--duration", 40,
               "--out", data)[0] == 0
    grid = tmp_path / "g.csv"
    grid.write_text("re,im\n0.3\n".replace("0.3\n", "0.3,0\n0.6,0\n"))
    code, out, _ = run(capsys, "identify", "--model", "thevenin1", "--in", data, "--grid", grid)
    assert code == 0
    est = {r["name"]: float(r["value"]) for r in rows(out)}
    for k, v in PRESETS["paper-m1"].params.items():
        assert est[k] == pytest.approx(v, rel=1e-4)


def test_approx_prints_error(capsys, tmp_path):
    table = tmp_path / "w.csv"
    code, out, _ = run(capsys, "approx", "--order", 7, "--kmax", 10000, "--out", table)
    assert code == 0
    (row,) = rows(out)
    assert float(row["e_percent"]) <= 0.5
    impulse = rows(table.read_text())
    assert len(impulse) == 10001 and list(impulse[0]) == ["k", "w", "w_hat"]


def test_approx_printed_matrices(capsys, tmp_path):
    mats = tmp_path / "m.csv"
    code, out, _ = run(capsys, "approx", "--printed", "--matrices", mats)
    assert code == 0
    assert rows(out)[0]["hankel_size"] == "printed"
    assert len(rows(mats.read_text())) == 49 + 7 + 7


def test_bode(capsys):
    code, out, _ = run(capsys, "bode", "--points", 5, "--wmin", 0.001, "--wmax", 0.015)
    assert code == 0
    table = rows(out)
    assert len(table) == 5
    for r in table:
        assert abs(float(r["phase_deg"]) + 45) < 2.0


def test_bfr_and_montecarlo(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(capsys, "simulate", "--model", "sre", "--duration", 40, "--out", a)
    run(capsys, "simulate", "--model", "sre", "--duration", 40, "--snr", 20, "--seed", 3,
        "--out", b)
    code, out, _ = run(capsys, "bfr", "--ref", a, "--sim", b, "--windows", "0:2500,2500:5000")
    assert code == 0
    assert [r["window"] for r in rows(out)] == ["W0", "W1", "overall"]
    code, out, _ = run(capsys, "montecarlo", "--model", "sre", "--snr", 20, "--trials", 3,
                       "--duration", 40)
    assert code == 0
    table = rows(out)
    assert table[0] == {"kind": "meta", "name": "snr_db", "truth": "", "mean": "20", "std": ""}
    assert {r["name"] for r in table if r["kind"] == "param"} == {"ocv0", "c0", "r0"}


def test_outputs_are_idempotent(tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"n{k}.csv"
        run(capsys, "simulate", "--model", "randles", "--duration", 40, "--snr", 10, "--seed", 5,
            "--out", path)
        outs.append(path.read_bytes())
        outs.append(run(capsys, "identify", "--model", "randles", "--in", path)[1])
    assert outs[0] == outs[2] and outs[1] == outs[3]


def test_seed_changes_noise(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(capsys, "simulate", "--model", "sre", "--duration", 4, "--snr", 10, "--seed", 1, "--out", a)
    run(capsys, "simulate", "--model", "sre", "--duration", 4, "--snr", 10, "--seed", 2, "--out", b)
    assert a.read_bytes() != b.read_bytes()


def test_all_violations_listed(capsys):
    code, out, err = run(capsys, "identify", "--model", "sre", "--order", 2, "--grid", "nope.csv",
                         "--in", "missing.csv", "--ts", -1)
    assert code == 2 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 4
    assert all(ERROR_LINE.match(line) for line in lines)
    assert all(line.startswith("error: config:") for line in lines)


@pytest.mark.parametrize("argv", [
    ["identify", "--model", "thevenin", "--in", "x.csv"],
    ["simulate", "--model", "thevenin1", "--order", 2],
    ["simulate", "--model", "sre", "--preset", "paper-m1"],
    ["simulate", "--model", "sre", "--duration", 0],
    ["montecarlo", "--model", "randles", "--snr", 20, "--trials", 0],
    ["bode", "--wmin", 0.5, "--wmax", 0.1],
    ["approx", "--order", 5, "--printed"],
])
def test_config_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert all(ERROR_LINE.match(line) for line in err.strip().splitlines())


def test_runtime_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,i_bat,v_bat\n0,1,4\n0.008,1\n")
    code, _, err = run(capsys, "identify", "--model", "sre", "--in", bad)
    assert code == 1
    assert err.strip() == "error: RecordFormatError: line 3: expected 3 columns, found 2"


def test_unknown_subcommand():
    res = subprocess.run([sys.executable, "-m", "ecmid", "frobnicate"], capture_output=True,
                         text=True)
    assert res.returncode != 0
    assert "usage:" in res.stderr


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ecmid", "approx", "--kmax", "200"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("order,k_max,hankel_size,e_percent,spectral_radius\n")


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    raise AssertionError("no subcommands")


@pytest.mark.parametrize("name", ["simulate", "identify", "approx", "bode", "bfr", "montecarlo"])
def test_help_documents_every_flag(name):
    sub = _subparsers(cli.build_parser())[name]
    text = sub.format_help()
    for action in sub._actions:
        if isinstance(action, argparse._HelpAction):
            continue
        assert action.help, action.option_strings
        for opt in action.option_strings:
            assert opt in text
    for flag in ("--seed", "--out", "--ts"):
        assert flag in text


def test_global_flags_before_or_after_subcommand(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(capsys, "--seed", 4, "simulate", "--model", "sre", "--duration", 4, "--snr", 10, "--out", a)
    run(capsys, "simulate", "--model", "sre", "--duration", 4, "--snr", 10, "--seed", 4, "--out", b)
    assert a.read_bytes() == b.read_bytes()
