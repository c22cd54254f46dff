import json
import math

import numpy as np
import pandas as pd
import pytest

from sharedstep.cli import AgeGrid, build_parser, main, parse_grid, read_table_csv
from sharedstep.detect import read_report_json
from sharedstep.simulate import read_event_table
from sharedstep.survival import read_curve_csv, read_fit_csv, read_fit_json

POWER_MODEL = {
    "first": {"kind": "PowerLawCdf", "lambda": 1e-6, "q": 2},
    "diseases": [
        {"name": "j", "kind": "PowerLawCdf", "lambda": 1e-6, "q": 2},
        {"name": "k", "kind": "PowerLawCdf", "lambda": 1e-2, "q": 0},
    ],
}
EXP_MODEL = {
    "first": {"kind": "Exponential", "lambda": 1.0},
    "diseases": [{"name": f"d{i}", "kind": "Exponential", "lambda": l} for i, l in enumerate([0.5, 1.0, 2.0])],
}


@pytest.fixture
def model_file(tmp_path):
    p = tmp_path / "model.json"
    p.write_text(json.dumps(POWER_MODEL))
    return p


def run(*argv):
    return main([str(a) for a in argv])


def test_simulate_is_deterministic(tmp_path, model_file):
    args = ["simulate", "--model", model_file, "--subjects", 3000, "--follow-up", 100, "--seed", 4]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b", "--workers", 3) == 0
    a = (tmp_path / "a" / "events.csv").read_bytes()
    assert a == (tmp_path / "b" / "events.csv").read_bytes()
    tab = read_event_table(tmp_path / "a" / "events.csv")
    assert len(tab) == 6000
    assert tab.to_csv().encode() == a


def test_simulate_million(tmp_path, model_file):
    assert run("simulate", "--model", model_file, "--subjects", 10**6, "--follow-up", 100,
               "--out", tmp_path) == 0
    with open(tmp_path / "events.csv") as fh:
        assert sum(1 for _ in fh) == 2 * 10**6 + 1


def test_zero_subjects_rejected_at_parse_time(tmp_path, model_file, capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["simulate", "--model", str(model_file), "--subjects", "0",
                                   "--follow-up", "1", "--out", str(tmp_path)])
    assert exc.value.code == 2
    assert "must be positive" in capsys.readouterr().err


def test_missing_model_is_an_error(tmp_path, capsys):
    out = tmp_path / "never"
    assert run("simulate", "--model", tmp_path / "nope.json", "--subjects", 5, "--follow-up", 1, "--out", out) == 1
    assert "no such file" in capsys.readouterr().err
    assert not out.exists()


def test_bad_model_is_an_error(tmp_path, capsys):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"first": {"kind": "Nope", "lambda": 1}, "diseases": []}))
    assert run("analytic", "--model", p, "--grid", "0:1:3", "--out", tmp_path / "o") == 1
    assert "kind must be one of" in capsys.readouterr().err


def test_out_must_be_directory(tmp_path, model_file):
    f = tmp_path / "file"
    f.write_text("")
    assert run("analytic", "--model", model_file, "--grid", "0:1:3", "--out", f) == 1


@pytest.mark.parametrize("text", ["1:2", "2:1:5", "0:1:1", "a:b:c", "-1:2:3", "0:inf:3"])
def test_grid_rejects(text):
    import argparse

    with pytest.raises(argparse.ArgumentTypeError):
        parse_grid(text)


def test_grid_parse():
    g = parse_grid("0:10:11")
    assert g == AgeGrid(0.0, 10.0, 11)
    np.testing.assert_array_equal(g.ages(), np.arange(11.0))


def test_analytic_columns(tmp_path, model_file):
    assert run("analytic", "--model", model_file, "--grid", "0:80:9", "--out", tmp_path) == 0
    text = (tmp_path / "analytic.csv").read_text()
    df = read_table_csv(tmp_path / "analytic.csv")
    first = df.iloc[0]
    assert first.t == 0 and first.F_j == 0 and first["F_j&k"] == 0
    assert first.P0_shared == 1 and first.P0_indep == 1
    assert math.isnan(first.ENpos_shared) and math.isnan(first["F_j|k"])
    np.testing.assert_array_equal(df.EN_shared, df.EN_indep)
    # lossless round trip
    assert df.to_csv(index=False, float_format="%.17g", na_rep="") == text
    svg = (tmp_path / "analytic.svg").read_text()
    assert "<!-- sharedstep config sha256=" in svg


def test_analytic_exponential_inequality(tmp_path):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(EXP_MODEL))
    assert run("analytic", "--model", p, "--grid", "0:3:13", "--out", tmp_path) == 0
    df = read_table_csv(tmp_path / "analytic.csv").iloc[1:]
    assert (df.P0_shared > df.P0_indep).all()
    assert (df.ENpos_shared > df.ENpos_indep).all()


def test_analytic_is_idempotent(tmp_path, model_file):
    for d in ("a", "b"):
        assert run("analytic", "--model", model_file, "--grid", "0:50:6", "--out", tmp_path / d) == 0
    for name in ("analytic.csv", "analytic.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.fixture
def events(tmp_path, model_file):
    assert run("simulate", "--model", model_file, "--subjects", 200_000, "--follow-up", 100,
               "--seed", 2, "--out", tmp_path / "sim") == 0
    return tmp_path / "sim" / "events.csv"


def test_fit_and_detect(tmp_path, events, capsys):
    assert run("fit", "--events", events, "--disease", "j", "--given", "k", "--out", tmp_path / "fit") == 0
    fit = read_fit_json(tmp_path / "fit" / "fit.json")
    assert read_fit_csv(tmp_path / "fit" / "fit.csv") == fit
    curve = read_curve_csv(tmp_path / "fit" / "cumhaz.csv")
    assert len(curve) > 0 and (tmp_path / "fit" / "loglog.svg").exists()
    assert run("detect", "--events", events, "--j", "j", "--k", "k", "--out", tmp_path / "det") == 0
    out = capsys.readouterr().out
    assert "verdict" in out
    report = read_report_json(tmp_path / "det" / "report.json")
    assert report.verdict.value == "SharedStep"
    hidden = json.loads((tmp_path / "det" / "hidden_step.json").read_text())
    assert report.recovered_q0 == hidden["q0"]


def test_fit_unknown_disease(tmp_path, events, capsys):
    assert run("fit", "--events", events, "--disease", "zz", "--out", tmp_path / "f") == 1
    assert "unknown disease" in capsys.readouterr().err


def test_detect_same_disease(tmp_path, events):
    assert run("detect", "--events", events, "--j", "j", "--k", "j", "--out", tmp_path / "d") == 1


def test_reproduce_fig2_small(tmp_path):
    assert run("reproduce-fig2", "--subjects", 20_000, "--out", tmp_path) == 0
    df = read_table_csv(tmp_path / "fig2.csv")
    assert len(df) == 12
    assert set(df.model) == {"shared", "independent"}
    cfg = json.loads((tmp_path / "fig2_config.json").read_text())
    assert cfg["subjects"] == 20_000
    svg = (tmp_path / "fig2.svg").read_text()
    assert svg.count("<!-- sharedstep config sha256=") == 1
