from pathlib import Path

import numpy as np
import pytest

from causalqm.config import ConfigError, build_config, load_config
from causalqm.fixtures import FIXTURE_NAMES, fixture_config, fixture_raw

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _raw(**sections):
    raw = fixture_raw("gaussian_1d")
    for key, values in sections.items():
        raw.setdefault(key, {}).update(values)
    return raw


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_shipped_configs_match_fixtures(name):
    shipped = load_config(CONFIGS / f"{name}.toml")
    assert shipped.sha256() == fixture_config(name).sha256()


def test_superposition_config_loads():
    cfg = load_config(CONFIGS / "superposition_2d.toml")
    assert cfg.ndim == 2 and len(cfg.wavefunction.terms) == 2
    assert cfg.wavefunction.terms[1].coefficient == 0.5j


def test_defaults_are_filled():
    cfg = build_config({"grid": {"lower": -12.0, "upper": 12.0, "points": 256, "ndim": 1},
                        "wavefunction": {"kind": "gaussian", "center": 0.0, "sigma": 1.0}}, Path("."))
    assert cfg.seed == 0 and cfg.n_particles == 100_000 and cfg.stride == 20
    assert cfg.tolerances["ks_alpha"] == 0.01
    assert cfg.options.variant == 1 and cfg.options.mode == "cdf"


@pytest.mark.parametrize("sections, path", [
    ({"wavefunction": {"sigma": -1.0}}, "wavefunction.sigma"),
    ({"wavefunction": {"center": 11.0}}, "wavefunction.center"),
    ({"grid": {"points": 100}}, "grid.points"),
    ({"grid": {"upper": -20.0}}, "grid.upper"),
    ({"potential": {"kind": "harmonic"}}, "potential.omega"),
    ({"potential": {"masses": 0.0}}, "potential.masses"),
    ({"chain": {"variant": 2}}, "chain.variant"),
    ({"chain": {"signs": [2]}}, "chain.signs"),
    ({"chain": {"mode": "other"}}, "chain.mode"),
    ({"solver": {"method": "magic"}}, "solver.method"),
    ({"time": {"horizon": 1.0012}}, "time.horizon"),
    ({"time": {"stride": 300}}, "time.stride"),
    ({"time": {"dt": 0.01, "stride": 5}}, "time.dt"),
    ({"ensemble": {"n": 100}}, "ensemble.n"),
    ({"ensemble": {"seed": -1}}, "ensemble.seed"),
    ({"tolerances": {"curl": 0.0}}, "tolerances.curl"),
    ({"grid": {"spacing": 1.0}}, "grid.spacing"),
    ({"extras": {}}, "extras"),
])
def test_errors_name_the_field(sections, path):
    with pytest.raises(ConfigError) as info:
        build_config(_raw(**sections), Path("."))
    assert info.value.path == path
    assert str(info.value).startswith(f"{path}: ")


def test_correlation_needs_valid_range():
    raw = fixture_raw("correlated_2d")
    raw["wavefunction"]["correlation"] = 1.0
    with pytest.raises(ConfigError, match="wavefunction.correlation"):
        build_config(raw, Path("."))


def test_missing_tables_are_reported(tmp_path):
    with pytest.raises(ConfigError, match="potential.table: file"):
        build_config(_raw(potential={"kind": "tabulated", "table": "nope.csv"}), tmp_path)
    raw = fixture_raw("correlated_2d")
    raw["gauge"] = {"kind": "tabulated", "table": "gauge.csv"}
    with pytest.raises(ConfigError, match="gauge.table"):
        build_config(raw, tmp_path)


def test_tabulated_potential_round_trip(tmp_path):
    cfg = fixture_config("harmonic_1d")
    x = cfg.grid.axes[0]
    np.savetxt(tmp_path / "u.csv", np.column_stack([x, 0.5 * x ** 2]), delimiter=",", header="x,U", comments="")
    tab = build_config(_raw(potential={"kind": "tabulated", "table": "u.csv"}), tmp_path)
    assert np.allclose(tab.potential.values(tab.grid), cfg.potential.values(cfg.grid))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="<file>"):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(bad)


def test_hash_is_stable_and_ignores_output(tmp_path):
    cfg = fixture_config("gaussian_1d")
    moved = cfg.with_overrides(output_dir=tmp_path)
    assert moved.sha256() == cfg.sha256() and moved.output_dir == tmp_path.resolve()
    assert cfg.with_overrides(seed=11).sha256() != cfg.sha256()
    assert fixture_config("gaussian_1d").sha256() == cfg.sha256()


def test_overrides_revalidate():
    cfg = fixture_config("correlated_2d")
    assert cfg.with_overrides(signs=(-1, 1)).options.signs == (-1, 1)
    with pytest.raises(ConfigError, match="chain.signs"):
        cfg.with_overrides(signs=(0, 1))
