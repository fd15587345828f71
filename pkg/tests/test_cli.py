import json
from pathlib import Path

import numpy as np
import pytest

from causalqm.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main
from causalqm.export import read_field

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

GAUSSIAN_1D = """
[grid]
ndim = 1
lower = -12.0
upper = 12.0
points = 256

[wavefunction]
kind = "gaussian"
center = 0.0
sigma = {sigma}
k = 0.5

[time]
horizon = {horizon}
dt = 0.005
stride = {stride}

[ensemble]
n = 10000
seed = 7
"""


def _write(tmp_path, sigma=1.0, horizon=1.0, stride=10, extra=""):
    path = tmp_path / "run.toml"
    path.write_text(GAUSSIAN_1D.format(sigma=sigma, horizon=horizon, stride=stride) + extra)
    return path


def _provenance(path: Path) -> str:
    return path.read_text().splitlines()[0]


def test_evolve_writes_snapshots(tmp_path):
    cfg = _write(tmp_path, horizon=0.05, stride=1)
    assert main(["evolve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_PASS
    out = tmp_path / "o" / "evolve"
    files = sorted(out.glob("psi_*.csv"))
    assert len(files) == 11
    header, data = read_field(files[-1])
    assert header == ["x1", "re", "im", "density"]
    assert _provenance(files[0]).startswith("# config_sha256=") and _provenance(files[0]).endswith("seed=7")
    report = json.loads((out / "evolve_report.json").read_text())
    assert all(abs(s["norm"] - 1.0) < 1e-12 for s in report["snapshots"])


def test_invalid_config_exits_with_field_path(tmp_path, capsys):
    cfg = _write(tmp_path, sigma=-1.0)
    assert main(["evolve", "--config", str(cfg)]) == EXIT_CONFIG
    assert "wavefunction.sigma" in capsys.readouterr().err
    assert main(["verify", "--config", str(tmp_path / "absent.toml")]) == EXIT_CONFIG


def test_verify_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--config", str(cfg), "--out", str(a)]) == EXIT_PASS
    assert main(["verify", "--config", str(cfg), "--out", str(b)]) == EXIT_PASS
    assert (a / "verify_report.json").read_bytes() == (b / "verify_report.json").read_bytes()


def test_injected_corruption_fails_verification(tmp_path, caplog):
    cfg = _write(tmp_path)
    code = main(["verify", "--config", str(cfg), "--out", str(tmp_path), "--inject-corruption",
                 "--skip-trajectories"])
    assert code == EXIT_FAIL
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert report["corrupted"] and not report["pass"]
    assert "marginals" in " ".join(r.getMessage() for r in caplog.records)


def test_seed_override_changes_provenance(tmp_path):
    cfg = _write(tmp_path)
    out = tmp_path / "o"
    assert main(["trajectories", "--config", str(cfg), "--out", str(out), "--seed", "21", "--flow", "dbb"]) \
        == EXIT_PASS
    ens = out / "trajectories" / "ensemble_dbb.csv"
    assert _provenance(ens).endswith("seed=21")
    report = json.loads((out / "trajectories" / "equivariance_report.json").read_text())
    assert report["flows"]["dbb"]["provenance"] == "dbb" and report["flows"]["dbb"]["pass"]
    header, data = read_field(ens)
    assert header == ["particle", "t", "x1", "p1", "escaped"]
    assert sorted(set(data[:, 1])) == [0.0, 0.5, 1.0]


def test_trajectory_comparison_in_one_dimension(tmp_path):
    cfg = _write(tmp_path)
    assert main(["trajectories", "--config", str(cfg), "--out", str(tmp_path), "--compare"]) == EXIT_PASS
    comp = json.loads((tmp_path / "trajectories" / "comparison_report.json").read_text())
    assert comp["finite"] and max(comp["rms_divergence"]) == 0.0
    assert len(comp["ratio"]) == len(comp["times"])


def test_fields_in_one_dimension(tmp_path):
    cfg = _write(tmp_path)
    assert main(["fields", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_PASS
    out = tmp_path / "fields"
    assert not list(out.glob("W12_*.csv"))
    assert len(list(out.glob("Hc_*.csv"))) == 3
    summary = json.loads((out / "residual_summary.json").read_text())
    assert [round(e["time"], 9) for e in summary["times"]] == [0.0, 0.5, 1.0]
    assert main(["fields", "--config", str(cfg), "--out", str(tmp_path / "all"), "--times", "all"]) == EXIT_PASS
    assert len(list((tmp_path / "all" / "fields").glob("Hc_*.csv"))) == 21


@pytest.mark.slow
def test_factorizable_fields_in_dbb_mode(tmp_path):
    text = (CONFIGS / "factorizable_2d.toml").read_text().replace("[chain]\n", '[chain]\nmode = "dbb"\n')
    assert 'mode = "dbb"' in text
    cfg = tmp_path / "fact.toml"
    cfg.write_text(text)
    assert main(["fields", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_PASS
    out = tmp_path / "fields"
    for name in ("W12", "A1", "A2"):
        _, data = read_field(sorted(out.glob(f"{name}_*.csv"))[-1])
        assert np.abs(data[:, -1]).max() < 1e-6, name


@pytest.mark.slow
def test_verify_all_branches(tmp_path):
    cfg = CONFIGS / "correlated_2d.toml"
    main(["verify", "--config", str(cfg), "--out", str(tmp_path), "--branch", "all", "--skip-trajectories"])
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert len(report["branches"]) == 4
    assert sorted(tuple(b["signs"]) for b in report["branches"]) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for b in report["branches"]:
        marg = [c for c in b["checks"] if c["name"] == "marginals"]
        assert marg and marg[0]["pass"]
