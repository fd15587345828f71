"""Plot-ready output files.  Every file starts with the config hash and seed;
floats use 17 significant digits so values round-trip exactly."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .wavepacket import GridSpec

FLOAT_FMT = "%.17g"


def json_safe(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def provenance_line(sha256: str, seed: int) -> str:
    return f"# config_sha256={sha256}, seed={seed}"


def _coords(grid: GridSpec) -> list[np.ndarray]:
    return [m.ravel() for m in grid.mesh()]


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray], sha256: str, seed: int,
               fmts: list[str] | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack(columns)
    fmts = fmts or [FLOAT_FMT] * table.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(provenance_line(sha256, seed) + "\n")
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, table, fmt=fmts, delimiter=",")
    return path


def write_field(path: Path, grid: GridSpec, values: np.ndarray, sha256: str, seed: int) -> Path:
    """One scalar field: columns ``x1[,x2],value``."""
    names = [f"x{d + 1}" for d in range(grid.ndim)] + ["value"]
    return _write_csv(Path(path), names, _coords(grid) + [np.asarray(values, dtype=float).ravel()], sha256, seed)


def write_wavefunction(path: Path, grid: GridSpec, psi: np.ndarray, sha256: str, seed: int) -> Path:
    """Columns ``x1[,x2],re,im,density``."""
    names = [f"x{d + 1}" for d in range(grid.ndim)] + ["re", "im", "density"]
    psi = np.asarray(psi).ravel()
    return _write_csv(Path(path), names, _coords(grid) + [psi.real, psi.imag, np.abs(psi) ** 2], sha256, seed)


def write_ensemble(path: Path, ensemble, sha256: str, seed: int, time_indices=None) -> Path:
    """Columns ``particle,t,x1[,x2],p1[,p2],escaped``, one row per particle and time."""
    n = ensemble.positions.shape[2]
    idx = list(range(len(ensemble.times))) if time_indices is None else list(time_indices)
    N = ensemble.n_particles
    particle = np.tile(np.arange(N), len(idx))
    t = np.repeat(ensemble.times[idx], N)
    x = ensemble.positions[idx].reshape(-1, n)
    if ensemble.momenta is not None:
        p = ensemble.momenta[idx].reshape(-1, n)
    else:
        p = np.full_like(x, np.nan)
    esc = ensemble.escaped[idx].reshape(-1).astype(int)
    names = ["particle", "t"] + [f"x{d + 1}" for d in range(n)] + [f"p{d + 1}" for d in range(n)] + ["escaped"]
    cols = [particle, t] + [x[:, d] for d in range(n)] + [p[:, d] for d in range(n)] + [esc]
    fmts = ["%d", FLOAT_FMT] + [FLOAT_FMT] * (2 * n) + ["%d"]
    return _write_csv(Path(path), names, cols, sha256, seed, fmts)


def write_json(path: Path, payload: dict, sha256: str, seed: int) -> Path:
    """Sorted keys and fixed indentation so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = json_safe({"config_sha256": sha256, "seed": seed, **payload})
    text = json.dumps(body, sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_field(path: Path) -> tuple[list[str], np.ndarray]:
    """Header names and data of a CSV written here (provenance line skipped)."""
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data
