"""TOML run configuration, validated in full before any computation.

Every problem is reported with the dotted path of the offending field, e.g.
``wavefunction.sigma: widths must be positive``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .pipeline import PipelineOptions
from .velocity_solver import Gauge
from .wavepacket import GaussianTerm, GridSpec, PotentialSpec, WavefunctionSpec

#: verification tolerances; any of them may be overridden under [tolerances]
DEFAULT_TOLERANCES = {
    "ks_alpha": 0.01,
    "n1_closed_form": 1e-6,
    "continuity_baseline": 1e-8,
    "continuity_factor": 10.0,
    "w_reduction": 1e3,
    "w_method_agreement": 10.0,
    "manufactured": 1e-3,
    "dbb_degeneracy": 1e-5,
    "dbb_velocity": 1e-6,
    "dbb_potential": 1e-3,
    "curl": 1e-2,
    "path": 1e-2,
    "hamilton_velocity": 1e-3,
    "collapse_n1": 1e-6,
    "divergence_factor": 10.0,
    "escape_fraction": 1e-3,
}

DEFAULTS = {
    "grid": {"lower": -8.0, "upper": 8.0, "points": 128, "ndim": 2},
    "wavefunction": {"kind": "gaussian", "center": 0.0, "sigma": 1.0, "k": 0.0, "correlation": 0.0},
    "potential": {"kind": "free", "masses": 1.0},
    "chain": {"variant": 1, "signs": None, "mode": "cdf", "oversample": None},
    "gauge": {"kind": "zero"},
    "solver": {"method": "least_squares", "tail_weight": 1.0, "condition": True},
    "time": {"horizon": 1.0, "dt": 0.0025, "stride": 20},
    "ensemble": {"n": 100_000, "seed": 0},
    "tolerances": {},
    "output": {"dir": "out"},
}

_ALLOWED = {
    "grid": {"lower", "upper", "points", "ndim"},
    "wavefunction": {"kind", "center", "sigma", "k", "correlation", "terms"},
    "potential": {"kind", "masses", "omega", "table"},
    "chain": {"variant", "signs", "mode", "oversample"},
    "gauge": {"kind", "table"},
    "solver": {"method", "tail_weight", "condition"},
    "time": {"horizon", "dt", "stride"},
    "ensemble": {"n", "seed"},
    "tolerances": set(DEFAULT_TOLERANCES),
    "output": {"dir"},
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class RunConfig:
    grid: GridSpec
    wavefunction: WavefunctionSpec
    potential: PotentialSpec
    options: PipelineOptions
    horizon: float
    dt: float
    stride: int
    n_particles: int
    seed: int
    tolerances: dict
    output_dir: Path
    raw: dict = field(repr=False)
    base: Path = Path(".")

    @property
    def ndim(self) -> int:
        return self.grid.ndim

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def masses(self) -> np.ndarray:
        return self.potential.masses_for(self.ndim)

    def sha256(self) -> str:
        """Hash of the canonical JSON form of the validated configuration.

        The output directory is excluded so relocated runs share a hash.
        """
        body = {k: v for k, v in self.raw.items() if k != "output"}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, seed: int | None = None, output_dir: str | Path | None = None,
                       signs=None) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["ensemble"]["seed"] = seed
        if output_dir is not None:
            raw["output"]["dir"] = str(Path(output_dir).resolve())
        if signs is not None:
            raw["chain"]["signs"] = list(signs)
        return build_config(raw, self.base)


def _merge(raw: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a table")
    for section, values in raw.items():
        if section not in _ALLOWED:
            raise ConfigError(section, "unknown section")
        if not isinstance(values, dict):
            raise ConfigError(section, "must be a table")
        for key in values:
            if key not in _ALLOWED[section]:
                raise ConfigError(f"{section}.{key}", "unknown field")
        out[section].update(values)
    return out


def _per_axis(value, n: int, path: str, kind=float) -> tuple:
    vals = value if isinstance(value, (list, tuple)) else [value] * n
    if len(vals) != n:
        raise ConfigError(path, f"expected {n} values, got {len(vals)}")
    try:
        return tuple(kind(v) for v in vals)
    except (TypeError, ValueError):
        raise ConfigError(path, f"values must be {kind.__name__}") from None


def _number(section: dict, key: str, path: str, kind=float, positive: bool = False):
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, "must be a number")
    value = kind(value)
    if positive and not value > 0:
        raise ConfigError(path, "must be positive")
    return value


def _read_table(path: Path, field_path: str, columns: int) -> np.ndarray:
    if not path.is_file():
        raise ConfigError(field_path, f"file {path} does not exist")
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ConfigError(field_path, f"cannot parse {path}: {exc}") from None
    if data.shape[1] != columns:
        raise ConfigError(field_path, f"expected {columns} columns in {path}")
    return data


def _terms(wf: dict, n: int) -> tuple[GaussianTerm, ...]:
    kind = wf["kind"]
    if kind == "gaussian":
        entries = [(wf, "wavefunction", [1.0, 0.0])]
    elif kind == "superposition":
        terms = wf.get("terms")
        if not isinstance(terms, list) or not terms:
            raise ConfigError("wavefunction.terms", "superposition needs a non-empty list of terms")
        entries = [(t, f"wavefunction.terms[{i}]", t.get("coefficient", [1.0, 0.0])) for i, t in enumerate(terms)]
    else:
        raise ConfigError("wavefunction.kind", f"unknown kind {kind!r} (gaussian or superposition)")
    out = []
    for entry, path, coef in entries:
        if not isinstance(entry, dict):
            raise ConfigError(path, "must be a table")
        entry = {**DEFAULTS["wavefunction"], **entry}
        sigma = _per_axis(entry["sigma"], n, f"{path}.sigma")
        if any(not s > 0 for s in sigma):
            raise ConfigError(f"{path}.sigma", "widths must be positive")
        corr = entry["correlation"]
        if isinstance(corr, bool) or not isinstance(corr, (int, float)) or not abs(corr) < 1:
            raise ConfigError(f"{path}.correlation", "must be a number with |c| < 1")
        if n == 1 and corr != 0:
            raise ConfigError(f"{path}.correlation", "correlation needs two axes")
        coef = coef if isinstance(coef, (list, tuple)) else [coef, 0.0]
        if len(coef) != 2:
            raise ConfigError(f"{path}.coefficient", "expected [real, imaginary]")
        out.append(GaussianTerm(_per_axis(entry["center"], n, f"{path}.center"), sigma,
                                _per_axis(entry["k"], n, f"{path}.k"), float(corr),
                                complex(float(coef[0]), float(coef[1]))))
    if all(t.coefficient == 0 for t in out):
        raise ConfigError("wavefunction.terms", "at least one coefficient must be nonzero")
    return tuple(out)


def build_config(raw: dict, base: Path) -> RunConfig:
    """Validate a parsed configuration; relative file paths resolve against ``base``."""
    cfg = _merge(raw)
    g = cfg["grid"]
    n = g["ndim"]
    if n not in (1, 2) or isinstance(n, bool):
        raise ConfigError("grid.ndim", "must be 1 or 2")
    lower = _per_axis(g["lower"], n, "grid.lower")
    upper = _per_axis(g["upper"], n, "grid.upper")
    points = _per_axis(g["points"], n, "grid.points", int)
    for d in range(n):
        if not upper[d] > lower[d]:
            raise ConfigError("grid.upper", "must exceed grid.lower on every axis")
        if points[d] < 64 or points[d] & (points[d] - 1):
            raise ConfigError("grid.points", "must be a power of two >= 64")
    grid = GridSpec(lower, upper, points)

    wf = cfg["wavefunction"]
    terms = _terms(wf, n)
    spec = WavefunctionSpec(wf["kind"], terms)
    for i, t in enumerate(terms):
        for d in range(n):
            if t.center[d] - 4 * t.sigma[d] < lower[d] or t.center[d] + 4 * t.sigma[d] > upper[d]:
                raise ConfigError("wavefunction.center" if wf["kind"] == "gaussian" else f"wavefunction.terms[{i}]",
                                  "center +- 4 sigma leaves the grid")

    p = cfg["potential"]
    masses = _per_axis(p["masses"], n, "potential.masses")
    if any(not m > 0 for m in masses):
        raise ConfigError("potential.masses", "masses must be positive")
    kind = p["kind"]
    if kind == "free":
        potential = PotentialSpec("free", masses)
    elif kind == "harmonic":
        if "omega" not in p:
            raise ConfigError("potential.omega", "harmonic potential needs omega")
        omega = _per_axis(p["omega"], n, "potential.omega")
        if any(not w > 0 for w in omega):
            raise ConfigError("potential.omega", "frequencies must be positive")
        potential = PotentialSpec("harmonic", masses, omega)
    elif kind == "tabulated":
        if "table" not in p:
            raise ConfigError("potential.table", "tabulated potential needs a table file")
        data = _read_table(base / p["table"], "potential.table", n + 1)
        if data.shape[0] != int(np.prod(points)):
            raise ConfigError("potential.table", f"expected {int(np.prod(points))} rows")
        potential = PotentialSpec("tabulated", masses, table=data[:, -1].reshape(points))
    else:
        raise ConfigError("potential.kind", f"unknown kind {kind!r} (free, harmonic or tabulated)")

    c = cfg["chain"]
    variant = c["variant"]
    valid_variants = (1,) if n == 1 else (1, 2, 3)
    if variant not in valid_variants or isinstance(variant, bool):
        raise ConfigError("chain.variant", f"must be one of {valid_variants}")
    signs = c["signs"]
    if signs is not None:
        signs = _per_axis(signs, n, "chain.signs", int)
        if any(s not in (1, -1) for s in signs):
            raise ConfigError("chain.signs", "entries must be +1 or -1")
    if c["mode"] not in ("cdf", "dbb"):
        raise ConfigError("chain.mode", "must be 'cdf' or 'dbb'")
    oversample = c["oversample"]
    if oversample is not None and (isinstance(oversample, bool) or not isinstance(oversample, int) or oversample < 1):
        raise ConfigError("chain.oversample", "must be a positive integer")

    ga = cfg["gauge"]
    if ga["kind"] == "zero":
        gauge = Gauge()
    elif ga["kind"] == "tabulated":
        if "table" not in ga:
            raise ConfigError("gauge.table", "tabulated gauge needs a table file with columns g,h")
        data = _read_table(base / ga["table"], "gauge.table", 2)
        try:
            gauge = Gauge("tabulated", tuple(data[:, 0]), tuple(data[:, 1]))
        except ValueError as exc:
            raise ConfigError("gauge.table", str(exc)) from None
    else:
        raise ConfigError("gauge.kind", "must be 'zero' or 'tabulated'")

    s = cfg["solver"]
    if s["method"] not in ("least_squares", "characteristics"):
        raise ConfigError("solver.method", "must be 'least_squares' or 'characteristics'")
    tail = _number(s, "tail_weight", "solver.tail_weight")
    if tail < 0:
        raise ConfigError("solver.tail_weight", "must be non-negative")
    if not isinstance(s["condition"], bool):
        raise ConfigError("solver.condition", "must be true or false")
    options = PipelineOptions(variant, signs, oversample, c["mode"], s["method"], gauge, tail, s["condition"])

    t = cfg["time"]
    horizon = _number(t, "horizon", "time.horizon", positive=True)
    dt = _number(t, "dt", "time.dt", positive=True)
    stride = t["stride"]
    if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
        raise ConfigError("time.stride", "must be a positive integer")
    steps = horizon / dt
    if abs(steps - round(steps)) > 1e-9 * steps:
        raise ConfigError("time.horizon", "must be a whole number of time steps dt")
    if round(steps) % stride:
        raise ConfigError("time.stride", "the number of steps must be a multiple of the stride")
    ratio = round(steps) // stride
    if ratio < 2:
        raise ConfigError("time.stride", "at least three stored snapshots are required")
    kinetic = sum(0.5 * (np.pi / grid.spacing[d]) ** 2 / masses[d] for d in range(n))
    if dt * kinetic >= np.pi:
        raise ConfigError("time.dt", f"dt times the largest kinetic eigenvalue {kinetic:.4g} must stay below pi")

    e = cfg["ensemble"]
    n_particles = e["n"]
    if isinstance(n_particles, bool) or not isinstance(n_particles, int) or n_particles < 10_000:
        raise ConfigError("ensemble.n", "must be an integer >= 10000")
    seed = e["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("ensemble.seed", "must be an unsigned 64-bit integer")

    tolerances = dict(DEFAULT_TOLERANCES)
    for key, value in cfg["tolerances"].items():
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            raise ConfigError(f"tolerances.{key}", "must be a positive number")
        tolerances[key] = float(value)
    if tolerances["ks_alpha"] >= 1:
        raise ConfigError("tolerances.ks_alpha", "must be below 1")

    out_dir = cfg["output"]["dir"]
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output.dir", "must be a non-empty path")
    output_dir = Path(out_dir) if Path(out_dir).is_absolute() else base / out_dir
    return RunConfig(grid, spec, potential, options, horizon, dt, stride, n_particles, seed, tolerances,
                     output_dir, cfg, base)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<file>", f"configuration file {path} does not exist")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
    return build_config(raw, path.parent)
