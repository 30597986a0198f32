import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from viscoslab import cli
from viscoslab import lame
from viscoslab.config import InitialData, Mode, RunConfig, from_dict, load_config, modes_field
from viscoslab.errors import ConfigurationError

SMALL_ARGS = ["--resolution", "16,1,8,8", "--dt", "0.05", "--T", "0.2"]


def test_config_roundtrip():
    cfg = RunConfig(kappa=30.0, initial=InitialData(eta=(Mode((1, 0), (0.0, 0.0, 0.01), 2),)))
    back = from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"grid": {"n1": 2}},
    {"kappa": -1},
    {"scheme": {"dt": 0}},
    {"initial": {"u": [{"k": [1, 0]}]}},
    {"material": {"lower": {"rho_bar": 1, "mu": 1}, "upper": {"rho_bar": 2, "mu": 1}}},
])
def test_bad_configs_rejected(doc, tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "bad.json")


def test_overrides():
    cfg = RunConfig().with_overrides(dim=3, resolution=(8, 8, 4, 4), dt=0.01, T=0.3, kappa=7)
    g = cfg.build_grid()
    assert (g.dim_mode, g.n2, g.n3m) == ("3D", 8, 4)
    s = cfg.scheme_config()
    assert (s.dt, s.T_end, cfg.kappa) == (0.01, 0.3, 7.0)
    assert RunConfig().with_overrides(dim=2).build_grid().n2 == 1


def test_mode_validation():
    with pytest.raises(ConfigurationError):
        Mode((1,), (0, 0, 0))
    with pytest.raises(ConfigurationError):
        Mode((1, 0), (0, 0, 0), profile=0)


def test_modes_field_walls_and_2d_component():
    g = RunConfig().build_grid()
    f = modes_field(g, (Mode((1, 0), (1.0, 1.0, 1.0), 3, 0.3),))
    assert np.abs(f.minus[:, 0]).max() == 0.0 and np.abs(f.plus[:, -1]).max() == 0.0
    assert f[1].max_abs() == 0.0
    assert f[0].max_abs() > 0.5


def test_compatible_initial_data_has_no_traction_mismatch():
    cfg = RunConfig(initial=InitialData(eta=(Mode((1, 0), (0.0, 0.0, 0.02), 1),)))
    g, p = cfg.build_grid(), cfg.params()
    eta, u = cfg.initial.fields(g, p)
    assert np.abs(lame.traction_mismatch(eta, u, p)).max() <= 1e-10
    raw = InitialData(eta=cfg.initial.eta, compatible=False).fields(g, p)[1]
    assert np.abs(lame.traction_mismatch(eta, raw, p)).max() > 1e-3


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_cli_run(tmp_path):
    assert cli.main(["run", *SMALL_ARGS, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "diagnostics.csv")
    assert len(rows) == 5 and float(rows[-1]["t"]) == pytest.approx(0.2)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["config"]["kappa"] == 100.0 and doc["terminal_event"] is None


def test_cli_run_from_rest_config(tmp_path):
    cfg = tmp_path / "rest.json"
    cfg.write_text(json.dumps({"initial": {"u": []}, "kappa": 10}))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), *SMALL_ARGS, "--out", str(out)]) == 0
    for row in _rows(out / "diagnostics.csv"):
        for col in ("E", "D", "kinetic", "potential", "elastic", "dissipation", "residual",
                    "max_interface_jump"):
            assert float(row[col]) == 0.0
        assert float(row["minJ"]) == 1.0


def test_cli_sweep(tmp_path):
    args = ["sweep", "--resolution", "8,1,4,4", "--dt", "0.05", "--T", "0.1",
            "--kappas", "10,100,1000", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert [float(r["kappa"]) for r in rows] == [10.0, 100.0, 1000.0]
    assert all(r["status"] == "ok" for r in rows)


def test_cli_lame_check(tmp_path):
    assert cli.main(["lame-check", "--resolution", "4,1,4,4", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "lame_check.csv")
    assert [int(r["resolution"]) for r in rows] == [4, 8, 16, 32]


def test_cli_energy_audit(tmp_path):
    args = ["energy-audit", "--resolution", "16,1,8,8", "--dt", "0.004", "--T", "0.02", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    rows = _rows(tmp_path / "energy_audit.csv")
    assert len(rows) == 3


def test_cli_identities(tmp_path):
    assert cli.main(["identities", "--samples", "1000", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "identities.txt").read_text()
    assert "Lame linearity" in text and text.count("\n") >= 10


def test_cli_configuration_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "viscoslab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "sweep", "identities", "lame-check", "energy-audit"):
        assert cmd in out.stdout
