import csv
import subprocess
import sys

import numpy as np
import pytest

from lodlab import cli, fem, lod
from lodlab import coefficient as co
from lodlab import quasi_interp as qi
from lodlab.mesh import build_hierarchy


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_config():
    cfg = cli.parse_config("""
        # a comment
        experiment = channels
        operator = clement, aw-proj
        beta = 2, 1e3   # trailing comment
        nH = 4, 8
        nh = 64
        k = 1, 2
        workers = 3
    """)
    assert cfg.experiment == "channels" and cfg.operators == ["clement", "aw-proj"]
    assert cfg.betas == [2.0, 1e3] and cfg.n_H == [4, 8] and cfg.n_h == 64
    assert cfg.k == [1, 2] and cfg.workers == 3
    assert cli.parse_config("preset = large").n_h == 256
    assert cli.parse_config("k = theory").k == "theory"
    assert cli.ExperimentConfig().validate().n_h == 128


@pytest.mark.parametrize("text, match", [
    ("beta 3", "expected 'key = value'"),
    ("colour = red", "unknown configuration key"),
    ("nH = four", "expected integers"),
    ("beta = x", "expected numbers"),
    ("preset = huge", "unknown preset"),
])
def test_config_syntax_errors(text, match):
    with pytest.raises(cli.ConfigError, match=match):
        cli.parse_config(text)


@pytest.mark.parametrize("text, match", [
    ("nH = 3\nnh = 32", "does not divide"),
    ("operator = nodal", "unknown operator"),
    ("experiment = spe", "unknown experiment"),
    ("k = 0", "positive integers"),
    ("beta = ", "empty"),
    ("localization = both", "localization"),
    ("workers = 0", "workers"),
])
def test_config_validation_errors(text, match):
    with pytest.raises(cli.ConfigError, match=match):
        cli.parse_config(text).validate()


def test_missing_config_file(tmp_path):
    with pytest.raises(cli.ConfigError, match="cannot read config"):
        cli.load_config(tmp_path / "none.cfg")


def test_run_single_row_matches_library():
    cfg = cli.parse_config("beta = 1\noperator = clement\nnH = 4\nnh = 32")
    rep = cli.run(cfg)
    assert len(rep.rows) == 1 and not rep.failed
    row = rep.rows[0]
    assert (row["k"], row["H"], row["coarse_dofs"], row["fine_dofs"]) == (3, 0.25, 9, 31 ** 2)
    h = build_hierarchy(4, 32, 32)
    op = qi.build_clement(h)
    solver = lod.CorrectorSolver(h, 1.0, op)
    uh = fem.solve_reference(h, 1.0, "half-step")
    sol = lod.solve_coarse(h, 1.0, op, "half-step", k=3, solver=solver)
    ref = fem.energy_error(uh, sol.fine, solver.K, relative=True)
    assert row["rel_energy_error"] == pytest.approx(ref, rel=1e-10)
    assert 0 < row["rel_energy_error"] < 1


def test_rows_sorted_and_k_policies():
    cfg = cli.parse_config("beta = 1e3, 1\noperator = proj, clement\nnH = 4, 2\nnh = 16\nk = 2, 1")
    rows = cli.run(cfg).rows
    keys = [(r["operator"], r["beta"], r["n_H"], r["k"]) for r in rows]
    assert keys == sorted(keys) and len(rows) == 16
    theory = cli.run(cli.parse_config("beta = 1e6\noperator = clement\nnH = 2\nnh = 16\nk = theory"))
    assert theory.rows[0]["k"] == lod.k_theory(2, 1e6)


def test_channels_preset_uses_channel_coefficient(monkeypatch):
    seen = []
    orig = co.sample_coefficient

    def spy(coeff, hier):
        seen.append(coeff)
        return orig(coeff, hier)

    monkeypatch.setattr(co, "sample_coefficient", spy)
    rep = cli.run(cli.parse_config("experiment = channels\nbeta = 1e4\noperator = clement\n"
                                   "nH = 4\nnh = 32"))
    assert not rep.failed
    assert np.array_equal(seen[0].values, co.make_channels(1e4).values)


def test_missing_raster_gives_failed_row(tmp_path, capsys):
    out = tmp_path / "r.csv"
    rc = cli.main(["run", "--experiment", "raster", "--raster", str(tmp_path / "absent.txt"),
                   "--nH", "4", "--nh", "64", "--out", str(out)])
    assert rc == 1
    rows = _read(out)
    assert len(rows) == 1 and rows[0]["rel_energy_error"] == "NaN"
    assert "cannot read raster file" in rows[0]["reason"]
    assert "failed row" in capsys.readouterr().err


def test_raster_experiment_reports_contrast(tmp_path):
    v = np.ones((8, 8))
    v[2:4, 2:5] = 500.0
    path = tmp_path / "k.txt"
    co.write_raster(co.RasterCoefficient(v), path)
    rep = cli.run(cli.parse_config(f"experiment = raster\nraster = {path}\noperator = aw-clement\n"
                                   "nH = 4\nnh = 32\nsource = unit"))
    assert not rep.failed and rep.rows[0]["beta"] == 500.0


def test_main_is_deterministic(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}.csv"
        assert cli.main(["run", "--beta", "1,100", "--operator", "aw-proj", "--nH", "2,4",
                         "--nh", "32", "--workers", "2", "--out", str(out)]) == 0
        outs.append([{k: v for k, v in r.items() if k != "wall_time_s"} for r in _read(out)])
    assert outs[0] == outs[1] and len(outs[0]) == 4


def test_bad_flags_exit_with_config_error(tmp_path, capsys):
    assert cli.main(["run", "--nH", "3", "--nh", "32", "--out", str(tmp_path / "x.csv")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_diagnose_outputs(tmp_path):
    out = tmp_path / "d.csv"
    cfg_path = tmp_path / "d.cfg"
    cfg_path.write_text(f"beta = 1e6\noperator = aw-proj\nnH = 4\nnh = 32\nout = {out}\n"
                        "decay_k = 1, 2, 3, 4\nqi3 = yes\n")
    assert cli.main(["diagnose", "--config", str(cfg_path)]) == 0
    rows = _read(out)
    assert len(rows) == 32
    assert {r["qm_type"] for r in rows} == {"type1"}
    assert all(float(r["C_P_est"]) > 0 and float(r["C_qip_est"]) > 0 for r in rows)
    decay = _read(tmp_path / "d_decay.csv")
    assert len(decay) == 1
    tails = [float(decay[0][f"tail_k{k}"]) for k in (1, 2, 3, 4)]
    assert all(b <= a for a, b in zip(tails, tails[1:]))
    assert tails[0] <= float(decay[0]["total"])


def test_diagnose_constant_coefficient_is_beta_free(tmp_path):
    path = tmp_path / "c.txt"
    co.write_raster(co.constant_raster(3.0, 4), path)
    tri, _ = cli.diagnose(cli.parse_config(f"experiment = raster\nraster = {path}\nbeta = 1, 1e6\n"
                                           "operator = clement\nnH = 2\nnh = 16"))
    assert not tri.failed
    by_beta = {}
    for r in tri.rows:
        by_beta.setdefault(r["beta"], []).append(r["C_P_est"])
    assert by_beta[1.0] == by_beta[1e6]
    assert {r["qm_type"] for r in tri.rows} == {"type1"}


def test_console_entry_point(tmp_path):
    out = tmp_path / "e.csv"
    res = subprocess.run([sys.executable, "-m", "lodlab.cli", "run", "--beta", "1", "--operator",
                          "clement", "--nH", "2", "--nh", "32", "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "wrote 1 rows" in res.stdout and out.exists()
