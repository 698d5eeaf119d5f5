import csv
import json

import pytest

from gtwr import cli, validate
from gtwr.experiment import simulate, ExperimentConfig, write_observations_csv

INI = """[experiment]
preset = model2
seed = 3
replications = 2

[design]
nx = 4
nt = 6
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(INI)
    return p


def test_simulate_commands(tmp_path, config, capsys):
    assert cli.main(["simulate-noise", "--config", str(config), "--out", str(tmp_path / "n")]) == 0
    assert "alpha = 2*H_s - 1 = -0.2" in capsys.readouterr().err
    rows = list(csv.reader(open(tmp_path / "n" / "noise.csv")))
    assert len(rows) == 1 + 2 * 96
    assert (tmp_path / "n" / "spatial_cov.csv").exists()
    assert cli.main(["simulate-covariates", "--config", str(config), "--replications", "3",
                     "--out", str(tmp_path / "c")]) == 0
    assert sorted(p.name for p in (tmp_path / "c").iterdir()) == [
        "covariates_0.csv", "covariates_1.csv", "covariates_2.csv"]


def test_run_summarize_qme(tmp_path, config, capsys, monkeypatch):
    monkeypatch.setenv("GTWR_THREADS", "2")
    out = tmp_path / "r"
    assert cli.main(["run", "--config", str(config), "--seed", "11", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["experiment"]["seed"] == "11"
    assert cli.main(["summarize", str(out)]) == 0
    assert "adjusted R^2" in capsys.readouterr().out
    assert cli.main(["qme", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "qme_mean.csv")))
    assert len(rows) == 6 and rows[-1]["cumulative_obs"] == "96"
    again = tmp_path / "again"
    assert cli.main(["run", "--manifest", str(out / "manifest.json"), "--out", str(again)]) == 0
    assert (again / "fits.csv").read_bytes() == (out / "fits.csv").read_bytes()


def test_run_without_qme(tmp_path, config):
    assert cli.main(["run", "--config", str(config), "--no-qme", "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "qme.csv").exists()
    assert cli.main(["qme", str(tmp_path)]) == 2


def test_bad_config_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[noise]\nH = 1.5\n")
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_validate_exit_codes(tmp_path, monkeypatch):
    ok = [validate.OracleReport("x", 1.0, 0.1, 1.0, 0.0, True)]
    monkeypatch.setattr(validate, "run_validation", lambda seed, mc: ok)
    assert cli.main(["validate", "--out", str(tmp_path)]) == 0
    bad = ok + [validate.OracleReport("y", 1.0, 0.1, 2.0, 10.0, False)]
    monkeypatch.setattr(validate, "run_validation", lambda seed, mc: bad)
    assert cli.main(["validate", "--out", str(tmp_path)]) == 1
    assert (tmp_path / "validation.json").exists()


def test_fit_command(tmp_path):
    cfg = ExperimentConfig.from_sections({"design": {"nx": 4, "nt": 6}})
    data = simulate(cfg, 1)
    p = tmp_path / "obs.csv"
    write_observations_csv(p, data.t, data.u, data.x[0][:, None], data.y[0])
    assert cli.main(["fit", "--data", str(p), "--out", str(tmp_path / "f")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "f" / "fits.csv")))
    assert len(rows) == 96 and "beta_0" in rows[0]
    assert cli.main(["fit", "--data", str(p), "--h", "0.3", "--intercept",
                     "--out", str(tmp_path / "g")]) == 0
    assert "beta_1" in next(csv.DictReader(open(tmp_path / "g" / "fits.csv")))
    (tmp_path / "bad.csv").write_text("t,x_1,covariate_1\n0,0,1\n")
    assert cli.main(["fit", "--data", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "h")]) == 2
