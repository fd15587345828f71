"""Named reference configurations and a manufactured W-equation case.

The same configurations ship as TOML files under ``configs/``.
"""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np

from ._numerics import resolved_mask
from .config import RunConfig, build_config
from .velocity_solver import StructureTensors
from .wavepacket import GridSpec

_FIXTURES = {
    "gaussian_1d": {
        "grid": {"lower": -12.0, "upper": 12.0, "points": 256, "ndim": 1},
        "wavefunction": {"kind": "gaussian", "center": 0.0, "sigma": 1.0, "k": 0.5},
        "time": {"horizon": 1.0, "dt": 0.005, "stride": 10},
        "ensemble": {"n": 100_000, "seed": 7},
    },
    "correlated_2d": {
        "grid": {"lower": -8.0, "upper": 8.0, "points": 128, "ndim": 2},
        "wavefunction": {"kind": "gaussian", "center": [0.0, 0.0], "sigma": [1.0, 1.0], "k": [0.0, 0.0],
                         "correlation": 0.5},
        "chain": {"variant": 1, "signs": [1, 1]},
        "time": {"horizon": 1.0, "dt": 0.0025, "stride": 20},
        "ensemble": {"n": 100_000, "seed": 7},
    },
    "factorizable_2d": {
        "grid": {"lower": -8.0, "upper": 8.0, "points": 128, "ndim": 2},
        "wavefunction": {"kind": "gaussian", "center": [0.0, 0.0], "sigma": [1.0, 0.8], "k": [0.3, -0.2],
                         "correlation": 0.0},
        "chain": {"variant": 1, "signs": [1, 1]},
        "time": {"horizon": 1.0, "dt": 0.0025, "stride": 20},
        "ensemble": {"n": 100_000, "seed": 7},
    },
    "harmonic_1d": {
        "grid": {"lower": -12.0, "upper": 12.0, "points": 256, "ndim": 1},
        "wavefunction": {"kind": "gaussian", "center": 0.0, "sigma": 0.5 ** 0.5, "k": 0.0},
        "potential": {"kind": "harmonic", "masses": 1.0, "omega": 1.0},
        "time": {"horizon": 1.0, "dt": 0.005, "stride": 10},
        "ensemble": {"n": 100_000, "seed": 7},
    },
}

FIXTURE_NAMES = tuple(_FIXTURES)


def fixture_raw(name: str) -> dict:
    if name not in _FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURE_NAMES)}")
    return copy.deepcopy(_FIXTURES[name])


def fixture_config(name: str, **sections) -> RunConfig:
    """Validated configuration of a named fixture; ``sections`` update whole tables,
    e.g. ``ensemble={"n": 10_000}``."""
    raw = fixture_raw(name)
    for key, values in sections.items():
        raw.setdefault(key, {}).update(values)
    return build_config(raw, Path("."))


def manufactured_case(grid: GridSpec | None = None):
    """A W-equation instance with a known solution W* = rho (x1 + x2^2 / 2).

    Returns (tensors, rho, W*).  F12 is built analytically from W* so that
    (d2 g) d1 W* - (d1 g) d2 W* = F12 holds exactly in the continuum.
    """
    grid = grid or GridSpec.square(-8.0, 8.0, 128, 2)
    x1, x2 = grid.mesh()
    rho = np.exp(-(x1 ** 2 - x1 * x2 + x2 ** 2) / 1.5)
    rho /= rho.sum() * grid.cell_volume
    f = 0.1 + 0.02 * x1
    g = f / rho
    r1 = -rho * (2 * x1 - x2) / 1.5
    r2 = -rho * (2 * x2 - x1) / 1.5
    phi = x1 + 0.5 * x2 ** 2
    g1 = 0.02 / rho - f * r1 / rho ** 2
    g2 = -f * r2 / rho ** 2
    w1 = r1 * phi + rho
    w2 = r2 * phi + rho * x2
    F = g2 * w1 - g1 * w2
    tensors = StructureTensors(grid, f, g, resolved_mask(rho), 0.0, F12=F)
    return tensors, rho, rho * phi
