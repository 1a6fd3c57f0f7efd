import json

import pytest

from contactrom.cli import main
from contactrom.mor import load_reduced
from contactrom.report import read_csv
from contactrom.scenario import crack_scenario, write_scenario


@pytest.fixture(scope="module")
def coarse_crack_toml(tmp_path_factory):
    d = tmp_path_factory.mktemp("scen")
    sc = crack_scenario(nx=10, ny=10, mode="full", h=0.5, n_steps=12, label="coarse")
    return write_scenario(sc, d)


def test_gen_and_run_full(tmp_path, capsys):
    assert main(["gen", "crack", "--out", str(tmp_path), "--nx", "10", "--ny", "10",
                 "--h", "0.5", "--steps", "10"]) == 0
    toml = tmp_path / "crack.toml"
    assert toml.exists()
    assert (tmp_path / "crack.mesh").exists()
    rc = main(["run", "--scenario", str(toml), "--out", str(tmp_path)])
    assert rc == 0
    csv = tmp_path / "crack_full.csv"
    assert csv.exists()
    summary = json.loads((tmp_path / "crack_full.summary.json").read_text())
    assert summary["dims"]["N"] > 0
    # figures rendered alongside the delimited output
    assert (tmp_path / "crack_full_gap_pressure.png").exists()
    assert (tmp_path / "crack_full_sensors.png").exists()
    assert (tmp_path / "crack_full_iterations.png").exists()


def test_run_missing_scenario(tmp_path, capsys):
    rc = main(["run", "--scenario", str(tmp_path / "absent.toml")])
    assert rc == 2
    assert "absent.toml" in capsys.readouterr().err


def test_run_determinism(coarse_crack_toml, tmp_path):
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["run", "--scenario", str(coarse_crack_toml), "--out", str(d1),
                 "--no-plots"]) == 0
    assert main(["run", "--scenario", str(coarse_crack_toml), "--out", str(d2),
                 "--no-plots"]) == 0
    a = (d1 / "coarse_full.csv").read_bytes()
    b = (d2 / "coarse_full.csv").read_bytes()
    assert a == b


def test_reduce_writes_sidecar(coarse_crack_toml, tmp_path, capsys):
    rc = main(["reduce", "--scenario", str(coarse_crack_toml), "--out", str(tmp_path),
               "--mode", "rom-cb"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    sidecar = tmp_path / "coarse_rom-cb.crom"
    assert sidecar.exists()
    model = load_reduced(sidecar)
    assert model.n_reduced == out["dims"]["n"]
    assert model.kind == "cb"


def test_rom_run_writes_sidecar_and_summary(coarse_crack_toml, tmp_path):
    rc = main(["run", "--scenario", str(coarse_crack_toml), "--out", str(tmp_path),
               "--mode", "rom-cb", "--no-plots"])
    assert rc == 0
    assert (tmp_path / "coarse_rom-cb.crom").exists()
    summary = json.loads((tmp_path / "coarse_rom-cb.summary.json").read_text())
    assert summary["dims"]["n"] == summary["dims"]["n_master"] + 3


def test_compare_self_zero(coarse_crack_toml, tmp_path, capsys):
    assert main(["run", "--scenario", str(coarse_crack_toml), "--out", str(tmp_path),
                 "--no-plots"]) == 0
    capsys.readouterr()   # drop the run banner
    csv = tmp_path / "coarse_full.csv"
    rc = main(["compare", str(csv), str(csv), "--out", str(tmp_path), "--no-plots"])
    assert rc == 0
    rep = json.loads(capsys.readouterr().out)
    for sensor in rep["sensors"].values():
        assert sensor["ux"]["max_abs"] == 0.0
        assert sensor["uy"]["l2_rel"] == 0.0
    assert rep["contact"]["pressure"]["max_abs"] == 0.0
    assert all(entry["complementarity_ok"] for entry in rep["complementarity"])
    assert (tmp_path / f"compare_{csv.stem}_vs_{csv.stem}.csv").exists()


def test_compare_grid_mismatch(coarse_crack_toml, tmp_path, capsys):
    assert main(["run", "--scenario", str(coarse_crack_toml), "--out", str(tmp_path),
                 "--no-plots"]) == 0
    csv = tmp_path / "coarse_full.csv"
    cols = read_csv(csv)
    clipped = tmp_path / "clipped.csv"
    lines = csv.read_text().splitlines()
    clipped.write_text("\n".join(lines[:-2]) + "\n")
    rc = main(["compare", str(csv), str(clipped), "--out", str(tmp_path), "--no-plots"])
    assert rc == 2
    assert "time grids differ" in capsys.readouterr().err


def test_compare_figures_rendered(coarse_crack_toml, tmp_path):
    assert main(["run", "--scenario", str(coarse_crack_toml), "--out", str(tmp_path),
                 "--no-plots"]) == 0
    assert main(["run", "--scenario", str(coarse_crack_toml), "--out", str(tmp_path),
                 "--mode", "rom-cb", "--no-plots"]) == 0
    a = tmp_path / "coarse_full.csv"
    b = tmp_path / "coarse_rom-cb.csv"
    rc = main(["compare", str(a), str(b), "--out", str(tmp_path)])
    assert rc == 0
    stem = f"compare_{a.stem}_vs_{b.stem}"
    assert (tmp_path / f"{stem}_gap_pressure.png").exists()
    assert (tmp_path / f"{stem}_residuals.png").exists()


def test_parallel_multi_run(coarse_crack_toml, tmp_path, monkeypatch):
    monkeypatch.setenv("CONTACTROM_THREADS", "2")
    rc = main(["run", "--scenario", str(coarse_crack_toml), str(coarse_crack_toml),
               "--out", str(tmp_path), "--no-plots"])
    assert rc == 0
    assert (tmp_path / "coarse_full.csv").exists()


def test_gen_wheelrail(tmp_path):
    assert main(["gen", "wheelrail", "--out", str(tmp_path), "--steps", "6",
                 "--h", "0.005"]) == 0
    assert (tmp_path / "wheelrail.toml").exists()
    assert (tmp_path / "wheelrail.mesh").exists()


def test_run_solver_failure_exit_code(tmp_path, capsys):
    sc = crack_scenario(nx=10, ny=10, mode="full", h=0.5, n_steps=40, label="doomed")
    sc.solver_tol = 1e-30   # unattainable: forces MaxIterations on active contact
    toml = write_scenario(sc, tmp_path)
    rc = main(["run", "--scenario", str(toml), "--out", str(tmp_path), "--no-plots"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "did not converge" in err
    assert (tmp_path / "doomed_full_partial.csv").exists()
