import os

import numpy as np
import pytest

from golf.cli import main
from golf.lattice import read_matrix


def write_cfg(path, **kw):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kw.items()))
    return str(path)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = write_cfg(root / "sim.cfg", sim_n1=6, sim_n2=6, sim_d_true=3, sim_missing_fraction=0.25, seed=3)
    assert main(["simulate", "--config", cfg, "--out", str(root / "data")]) == 0
    return root / "data"


def test_simulate_outputs(sim_dir):
    for f in ("data.csv", "mask.csv", "truth.csv", "coords_s.csv", "coords_x.csv", "config.txt"):
        assert (sim_dir / f).exists()
    values, mask = read_matrix(sim_dir / "data.csv")
    empty = sum(line.split(",").count("") for line in (sim_dir / "data.csv").read_text().splitlines())
    assert empty == (~mask).sum() == 9
    m, _ = read_matrix(sim_dir / "mask.csv")
    np.testing.assert_array_equal(m.astype(bool), mask)


def test_simulate_repeatable_and_refuses_existing(tmp_path, sim_dir):
    cfg = write_cfg(tmp_path / "sim.cfg", sim_n1=6, sim_n2=6, sim_d_true=3, sim_missing_fraction=0.25, seed=3)
    out = tmp_path / "again"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    for f in ("data.csv", "mask.csv", "truth.csv"):
        assert (out / f).read_bytes() == (sim_dir / f).read_bytes()
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 2
    assert main(["simulate", "--config", cfg, "--out", str(out), "--force"]) == 0


def test_fit_and_predict(tmp_path, sim_dir, capsys):
    cfg = write_cfg(tmp_path / "fit.cfg", data=sim_dir / "data.csv", coords_s=sim_dir / "coords_s.csv",
                    coords_x=sim_dir / "coords_x.csv", iterations=60, d=3, seed=1)
    chain = tmp_path / "chain"
    assert main(["fit", "--config", cfg, "--out", str(chain), "--quiet"]) == 0
    for f in ("meta.txt", "trace_beta.csv", "posterior_summary.csv", "summary.txt", "figures/traces.png"):
        assert (chain / f).exists(), f
    assert not (chain / "lock").exists()
    assert main(["predict", "--config", cfg, "--chain", str(chain), "--out", str(tmp_path / "pred")]) == 0
    printed = capsys.readouterr().out
    assert "rmse =" in printed and "coverage =" in printed
    mean, _ = read_matrix(tmp_path / "pred" / "pred_mean.csv", allow_missing=False)
    lo, _ = read_matrix(tmp_path / "pred" / "pred_lo.csv")
    hi, _ = read_matrix(tmp_path / "pred" / "pred_hi.csv")
    assert mean.shape == (6, 6)
    assert np.all(lo <= mean) and np.all(mean <= hi)
    header = (tmp_path / "pred" / "metrics.csv").read_text().splitlines()[0]
    assert header == "rmse,coverage,length,n_held_out,level"
    assert (tmp_path / "pred" / "figures" / "prediction.png").exists()


def test_fit_resume_matches_full_run(tmp_path, sim_dir):
    common = dict(data=sim_dir / "data.csv", coords_s=sim_dir / "coords_s.csv",
                  coords_x=sim_dir / "coords_x.csv", iterations=12, d=2, seed=7, figures="false")
    full = write_cfg(tmp_path / "full.cfg", **common)
    part = write_cfg(tmp_path / "part.cfg", stop_after=5, **common)
    assert main(["fit", "--config", full, "--out", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["fit", "--config", part, "--out", str(tmp_path / "b"), "--quiet"]) == 0
    assert main(["fit", "--config", full, "--out", str(tmp_path / "b"), "--resume", "--quiet"]) == 0
    for f in ("trace_beta0.csv", "trace_beta.csv", "trace_eta.csv", "trace_sigma0.csv", "meta.txt",
              "posterior_summary.csv", "imputed/draws.npy"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_malformed_csv_exit_code(tmp_path, sim_dir, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n4,x,6\n")
    cfg = write_cfg(tmp_path / "fit.cfg", data=bad, coords_s=sim_dir / "coords_s.csv",
                    coords_x=sim_dir / "coords_x.csv", iterations=5)
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "c"), "--quiet"]) == 3
    assert "row 2, column 2" in capsys.readouterr().err


def test_config_errors_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "x.cfg", iteratons=5)
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "c")]) == 2
    assert "unknown key" in capsys.readouterr().err
    ok = write_cfg(tmp_path / "ok.cfg", iterations=5)
    os.makedirs(tmp_path / "empty")
    assert main(["predict", "--config", ok, "--chain", str(tmp_path / "empty")]) == 2
    assert "meta.txt" in capsys.readouterr().err
    assert main(["predict", "--config", ok]) == 2
    assert main(["fit", "--config", ok, "--out", str(tmp_path / "d"), "--seed", "-1"]) == 2


def test_validate_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "v.cfg", validate_instances=5, seed=2)
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "v")]) == 0
    assert "overall: PASS" in capsys.readouterr().out
    assert (tmp_path / "v" / "validate.csv").exists()
    bug = write_cfg(tmp_path / "b.cfg", validate_instances=5, seed=2, validate_inject="w_sign")
    assert main(["validate", "--config", bug]) == 4
    assert "overall: FAIL" in capsys.readouterr().out
