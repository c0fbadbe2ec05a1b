"""Command-line driver: config handling, outputs, determinism, resume."""

import csv
import json

import numpy as np
import pytest

from clgsim.cli import (load_config, config_to_text, fit_exponents,
                        write_sweep_csv, read_sweep_csv, main)
from clgsim.exact1d import exact_observables
from clgsim.lattice import UsageError


# --- config handling ---------------------------------------------------------

def test_load_config_comments_and_overrides(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("""\
# experiment header
[geometry]
d = 1
L = 256   ; inline comment
[experiment]
seed = 7
""")
    cfg = load_config(ini)
    assert cfg == {"geometry": {"d": "1", "L": "256"},
                   "experiment": {"seed": "7"}}
    cfg = load_config(ini, overrides=["geometry.L=512", "output.dir=/tmp/x"])
    assert cfg["geometry"]["L"] == "512"
    assert cfg["output"] == {"dir": "/tmp/x"}
    with pytest.raises(UsageError):
        load_config(ini, overrides=["geometryL=512"])
    ini.write_text("L = 1\n")   # key before any section header
    with pytest.raises(UsageError):
        load_config(ini)


def test_config_round_trip(tmp_path):
    cfg = {"sweep": {"L": "512", "rho_grid": "0.52,0.54"},
           "experiment": {"seed": "3"}}
    path = tmp_path / "rt.ini"
    path.write_text(config_to_text(cfg))
    assert load_config(path) == cfg
    # canonical form is a fixed point
    assert config_to_text(load_config(path)) == config_to_text(cfg)


def test_missing_keys_reported_together(tmp_path, capsys):
    ini = tmp_path / "empty.ini"
    ini.write_text("")
    assert main(["run", str(ini)]) == 2
    err = capsys.readouterr().err
    for key in ("geometry.d", "geometry.L", "experiment.seed"):
        assert key in err


def test_bad_value_names_the_key(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[sweep]\nL = many\n[experiment]\nseed = 1\n")
    assert main(["sweep", str(ini), "--out", str(tmp_path / "o")]) == 2
    assert "sweep.L" in capsys.readouterr().err


# --- exact table -------------------------------------------------------------

def test_exact_command_values(tmp_path, capsys):
    out = tmp_path / "exact"
    assert main(["exact", "--out", str(out), "--set", "exact.rho_min=0.6",
                 "--set", "exact.rho_max=0.8", "--set", "exact.points=3"]) == 0
    rows = list(csv.DictReader(open(out / "exact.csv")))
    assert [r["rho"] for r in rows] == ["0.6", "0.7", "0.8"]
    e = exact_observables(0.7)
    assert float(rows[1]["activity"]) == pytest.approx(e.activity)
    assert float(rows[1]["xiCross"]) == pytest.approx(e.xi_cross)
    assert (out / "manifest.json").exists()
    assert (out / "resolved_config.ini").exists()


# --- sweep ----------------------------------------------------------------------

SWEEP_ARGS = ["--set", "sweep.L=256", "--set", "sweep.rho_grid=0.56,0.58,0.60,0.62",
              "--set", "sweep.snapshots=40", "--set", "sweep.replicas=2",
              "--set", "sweep.max_lag=16", "--set", "sweep.xi_r_max=8",
              "--set", "sweep.chi_cutoff=8", "--set", "experiment.seed=3"]


def run_sweep(tmp_path, name, extra=()):
    ini = tmp_path / "s.ini"
    ini.write_text("")
    out = tmp_path / name
    rc = main(["sweep", str(ini), "--out", str(out)] + SWEEP_ARGS + list(extra))
    assert rc == 0
    return out


def test_sweep_outputs_and_worker_count_invariance(tmp_path, monkeypatch):
    monkeypatch.setenv("CLG_THREADS", "1")
    a = run_sweep(tmp_path, "serial")
    monkeypatch.setenv("CLG_THREADS", "3")
    b = run_sweep(tmp_path, "parallel")
    # results are a deterministic function of the config and seed alone
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert (a / "exponents.json").read_bytes() == (b / "exponents.json").read_bytes()

    rows = read_sweep_csv(a / "sweep.csv")
    assert [r["rho"] for r in rows] == [0.56, 0.58, 0.60, 0.62]
    for r in rows:
        assert 0 < r["rhoA"] < 1 and r["rhoA_err"] > 0
        assert r["xiCross"] > 0 and r["snapshots"] == 40
    rep = json.loads((a / "exponents.json").read_text())
    assert set(rep["exponents"]) >= {"beta", "b", "gamma", "nu_cross",
                                     "nu_perp", "alpha"}
    assert rep["exponents"]["nu_perp"] == pytest.approx(1.0)   # exact by design
    assert {"r1", "r2", "r3", "r4"} <= set(rep["relations"])

    # analyze reproduces the sweep's own fit from the CSV alone
    out2 = tmp_path / "re"
    assert main(["analyze", str(tmp_path / "s.ini"), "--out", str(out2),
                 "--set", f"analyze.sweep_csv={a / 'sweep.csv'}"]) == 0
    rep2 = json.loads((out2 / "exponents.json").read_text())
    for k, v in rep["exponents"].items():
        if v is not None:
            assert rep2["exponents"][k] == pytest.approx(v, rel=1e-6)


def test_sweep_fit_refused_still_writes_data(tmp_path, capsys):
    ini = tmp_path / "s.ini"
    ini.write_text("")
    out = tmp_path / "one"
    rc = main(["sweep", str(ini), "--out", str(out),
               "--set", "sweep.L=128", "--set", "sweep.rho_grid=0.6",
               "--set", "sweep.snapshots=10", "--set", "sweep.replicas=2",
               "--set", "sweep.max_lag=8", "--set", "experiment.seed=1"])
    assert rc == 0
    assert "refused" in capsys.readouterr().err
    assert len(read_sweep_csv(out / "sweep.csv")) == 1
    assert "fit_refused" in json.loads((out / "exponents.json").read_text())


def test_fit_exponents_on_exact_table():
    # a synthetic sweep built from the closed forms recovers the exact
    # exponents up to the known curvature of the narrow-window fit
    rhos = np.arange(0.52, 0.551, 0.01)
    rows = []
    for rho in rhos:
        e = exact_observables(rho)
        rows.append({"rho": float(rho), "rhoA": e.rho_a, "rhoA_err": 1e-4,
                     "activity": e.activity, "chi": e.chi,
                     "xiCross": e.xi_cross})
    es, details, _ = fit_exponents(rows, 0.5, 0.0, window=(0.02, 0.05))
    assert abs(es.beta - 1.0) < 0.15
    assert abs(es.b - 1.0) < 0.15
    assert abs(es.gamma - 1.0) < 0.05
    assert abs(es.nu_cross - 1.0) < 0.05
    assert es.nu_perp == pytest.approx(1.0)


def test_sweep_csv_round_trip(tmp_path):
    rows = [{"rho": 0.6, "rhoA": 1 / 3, "rhoA_err": 0.01, "activity": 0.2,
             "activity_err": 0.01, "sigma": 0.05, "sigma_err": 0.002,
             "chi": 0.04, "chi_err": 0.003, "D": None, "D_err": None,
             "xiCross": 2.5, "xiCross_err": 0.1, "snapshots": 100}]
    path = tmp_path / "s.csv"
    write_sweep_csv(path, rows)
    back = read_sweep_csv(path)
    assert back[0]["snapshots"] == 100 and back[0]["D"] is None
    assert back[0]["rhoA"] == pytest.approx(1 / 3, abs=1e-10)


# --- run / resume ----------------------------------------------------------------

RUN_ARGS = ["--set", "geometry.d=1", "--set", "geometry.L=64",
            "--set", "experiment.seed=11", "--set", "run.initial=bernoulli",
            "--set", "run.rho=0.75", "--set", "run.snapshot_dt=0.5"]


def test_run_resume_reproduces_uninterrupted_run(tmp_path):
    ini = tmp_path / "r.ini"
    ini.write_text("")
    full = tmp_path / "full"
    assert main(["run", str(ini), "--out", str(full),
                 "--set", "run.snapshots=12"] + RUN_ARGS) == 0

    # same run stopped after 6 snapshots, then resumed to completion
    part = tmp_path / "part"
    assert main(["run", str(ini), "--out", str(part),
                 "--set", "run.snapshots=6"] + RUN_ARGS) == 0
    assert json.loads((part / "progress.json").read_text())["rows"] == 7
    assert main(["run", str(ini), "--out", str(part), "--resume",
                 "--set", "run.snapshots=12"] + RUN_ARGS) == 0

    assert (full / "observables.csv").read_bytes() == \
        (part / "observables.csv").read_bytes()


def test_run_resume_without_checkpoint_is_an_error(tmp_path, capsys):
    ini = tmp_path / "r.ini"
    ini.write_text("")
    rc = main(["run", str(ini), "--out", str(tmp_path / "nope"), "--resume",
               "--set", "run.snapshots=4"] + RUN_ARGS)
    assert rc == 2
    assert "resume" in capsys.readouterr().err


# --- plot-data --------------------------------------------------------------------

def test_plot_data_emits_figure_specs(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    (data / "corr.csv").write_text("lag,phi,stderr\n0,0.1875,0.001\n")
    (data / "summary.json").write_text('{"rho": 0.75}\n')
    ini = tmp_path / "p.ini"
    ini.write_text("")
    out = tmp_path / "figs"
    assert main(["plot-data", str(ini), "--out", str(out),
                 "--set", f"plotdata.data_dir={data}"]) == 0
    spec = json.loads((out / "correlation-decay.json").read_text())
    assert spec["kind"] == "correlation-decay"
    assert spec["inputs"]["csv"] == str(data / "corr.csv")
    assert spec["output"].endswith("correlation-decay.png")
    assert spec["overlay"] == {"kind": "exact-decay", "rho": 0.75}
    assert not (out / "sweep.csv").exists()


def test_plot_data_rejects_empty_directory(tmp_path, capsys):
    data = tmp_path / "empty"
    data.mkdir()
    ini = tmp_path / "p.ini"
    ini.write_text("")
    rc = main(["plot-data", str(ini), "--out", str(tmp_path / "figs"),
               "--set", f"plotdata.data_dir={data}"])
    assert rc == 2
    assert "no known CSV inputs" in capsys.readouterr().err
