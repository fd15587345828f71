"""Ensemble propagation under gridded velocity snapshots, momentum attachment
through the momentum map, equivariance tests and paired-seed comparison of
assembled and de Broglie-Bohm flows."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._numerics import interp_grid
from .marginal_chain import (CCSChain, MarginalCheck, build_chain, chain_representations,
                             marginal_checks)
from .velocity_solver import VelocityField, dbb_velocity, probability_current
from .wavepacket import GridSpec

#: fraction of escaped particles above which a warning is raised
ESCAPE_TOL = 1e-3


class NonFiniteVelocityError(FloatingPointError):
    """A velocity snapshot or interpolated velocity is not finite."""


class EscapeWarning(RuntimeWarning):
    """More particles left the grid than the tolerance allows."""


@dataclass
class TrajectoryEnsemble:
    grid: GridSpec
    times: np.ndarray
    positions: np.ndarray          # (T, N, n)
    momenta: np.ndarray | None     # (T, N, n)
    escaped: np.ndarray            # (T, N)
    provenance: str
    seed: int | None = None

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def escape_fraction(self) -> float:
        return float(self.escaped[-1].mean())

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not stored in the ensemble")
        return k


@dataclass
class EquivarianceReport:
    times: list[float]
    checks: dict = field(default_factory=dict)    # time -> list[MarginalCheck]

    def passed_at(self, t: float) -> bool:
        return all(c.passed for c in self.checks[t])

    @property
    def passed(self) -> bool:
        return all(self.passed_at(t) for t in self.times)

    def as_dict(self) -> dict:
        return {"pass": self.passed,
                "times": [{"t": t, "pass": self.passed_at(t), "checks": [c.as_dict() for c in self.checks[t]]}
                          for t in self.times]}


@dataclass
class ComparisonReport:
    times: np.ndarray
    rms: np.ndarray
    max: np.ndarray
    integrator_error: np.ndarray | None = None
    ks: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    W_summary: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        arrays = [self.rms, self.max] + ([self.integrator_error] if self.integrator_error is not None else [])
        return all(np.all(np.isfinite(a)) for a in arrays)

    def ratio(self) -> np.ndarray:
        """RMS divergence over the integrator error estimate at every time."""
        if self.integrator_error is None:
            raise ValueError("no integrator error estimate attached")
        return self.rms / np.maximum(self.integrator_error, 1e-300)

    def as_dict(self) -> dict:
        out = {"times": self.times.tolist(), "rms_divergence": self.rms.tolist(),
               "max_divergence": self.max.tolist(), "finite": self.finite}
        if self.integrator_error is not None:
            out["integrator_error"] = self.integrator_error.tolist()
        if self.ks:
            out["ks"] = self.ks
        if self.residuals:
            out["residuals"] = self.residuals
        if self.W_summary:
            out["W"] = self.W_summary
        return out


def _velocity_at(fields: np.ndarray, grid: GridSpec, x: np.ndarray) -> np.ndarray:
    out = np.stack([interp_grid(c, grid.axes, x) for c in fields], axis=1)
    if not np.all(np.isfinite(out)):
        raise NonFiniteVelocityError("interpolated velocity is not finite")
    return out


def _check_snapshots(velocities) -> tuple[np.ndarray, float]:
    velocities = list(velocities)
    if len(velocities) < 2:
        raise ValueError("at least two velocity snapshots are needed")
    grid = velocities[0].grid
    times = np.array([v.time for v in velocities])
    steps = np.diff(times)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(1.0, steps.max()):
        raise ValueError("velocity snapshots must be uniformly spaced in time")
    for v in velocities:
        if v.grid != grid:
            raise ValueError("velocity snapshots live on different grids")
        if not np.all(np.isfinite(v.v)):
            raise NonFiniteVelocityError(f"velocity snapshot at t={v.time} is not finite")
    return times, float(steps.mean())


def propagate(initial: np.ndarray, velocities, maps=None, provenance: str = "assembled",
              seed: int | None = None, escape_tol: float = ESCAPE_TOL) -> TrajectoryEnsemble:
    """RK4 with the snapshot spacing as step; fields are interpolated multilinearly
    in space and linearly in time.  Particles leaving the grid are frozen at the
    frame and flagged.  ``maps`` (one per snapshot) attaches momenta p(x, t)."""
    velocities = list(velocities)
    times, dt = _check_snapshots(velocities)
    grid = velocities[0].grid
    x = np.array(np.atleast_2d(initial), dtype=float)
    if x.shape[1] != grid.ndim:
        x = x.reshape(-1, grid.ndim)
    lo = np.array([a[0] for a in grid.axes])
    hi = np.array([a[-1] for a in grid.axes])
    esc = ~grid.contains(x)
    x = np.clip(x, lo, hi)
    pos = [x.copy()]
    flags = [esc.copy()]
    for k in range(len(velocities) - 1):
        a, b = velocities[k].v, velocities[k + 1].v
        mid = 0.5 * (a + b)
        k1 = _velocity_at(a, grid, x)
        k2 = _velocity_at(mid, grid, x + 0.5 * dt * k1)
        k3 = _velocity_at(mid, grid, x + 0.5 * dt * k2)
        k4 = _velocity_at(b, grid, x + dt * k3)
        new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out = ~grid.contains(new)
        new = np.clip(new, lo, hi)
        x = np.where(esc[:, None], x, new)
        esc = esc | out
        pos.append(x.copy())
        flags.append(esc.copy())
    positions = np.stack(pos)
    escaped = np.stack(flags)
    frac = float(escaped[-1].mean())
    if frac > escape_tol:
        warnings.warn(f"{frac:.3g} of the particles left the grid (tolerance {escape_tol})", EscapeWarning,
                      stacklevel=2)
    momenta = attach_momenta(positions, maps) if maps is not None else None
    return TrajectoryEnsemble(grid, times, positions, momenta, escaped, provenance, seed)


def attach_momenta(positions: np.ndarray, maps) -> np.ndarray:
    """p(x, t) at every stored position through the map of the same time."""
    maps = list(maps)
    if len(maps) != positions.shape[0]:
        raise ValueError("one momentum map per stored time is required")
    return np.stack([m.evaluate(x) for m, x in zip(maps, positions)])


def dbb_velocities(states, masses) -> list[VelocityField]:
    out = []
    for st in states:
        vb = dbb_velocity(probability_current(st, masses), st.density())
        out.append(vb)
    return out


def dbb_propagate(initial: np.ndarray, states, masses, maps=None, seed: int | None = None,
                  escape_tol: float = ESCAPE_TOL) -> TrajectoryEnsemble:
    """Propagate under v_B = j / |psi|^2 computed from each state snapshot."""
    return propagate(initial, dbb_velocities(states, masses), maps, "dbb", seed, escape_tol)


def integrator_error(initial: np.ndarray, velocities) -> tuple[np.ndarray, np.ndarray]:
    """Step-doubling estimate of the integration error at the even snapshot times.

    The linear-in-time field interpolation makes the scheme second order, so the
    error of the fine run is |x_dt - x_2dt| / 3.
    """
    velocities = list(velocities)
    if len(velocities) < 3 or (len(velocities) - 1) % 2:
        raise ValueError("step doubling needs an even number of intervals")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EscapeWarning)
        fine = propagate(initial, velocities)
        coarse = propagate(initial, velocities[::2])
    d = np.linalg.norm(fine.positions[::2] - coarse.positions, axis=2) / 3.0
    return coarse.times, np.sqrt(np.mean(d ** 2, axis=1))


def equivariance_test(ensemble: TrajectoryEnsemble, states, chain: CCSChain | None = None, times=None,
                      alpha: float = 0.01, oversample: int | None = None,
                      positions_only: bool = False) -> EquivarianceReport:
    """KS distances of positions, mapped momenta and mixed pairs against the
    marginals of |psi(t)|^2 at each requested time."""
    states = list(states)
    chain = chain or build_chain(ensemble.grid.ndim)
    by_time = {float(s.time): s for s in states}
    times = [float(t) for t in (times if times is not None else ensemble.times)]
    if not positions_only and ensemble.momenta is None:
        raise ValueError("ensemble has no momenta attached")
    report = EquivarianceReport(times)
    anchor = chain.tags[chain.anchor]
    for t in times:
        match = [s for tt, s in by_time.items() if abs(tt - t) <= 1e-9 * max(1.0, abs(t))]
        if not match:
            raise ValueError(f"no state snapshot at t={t}")
        k = ensemble.index_of(t)
        reps = chain_representations(match[0], chain, oversample)
        x = ensemble.positions[k]
        p = ensemble.momenta[k] if ensemble.momenta is not None else np.zeros_like(x)
        checks: list[MarginalCheck] = marginal_checks(reps, x, p, alpha)
        if positions_only:
            checks = [c for c in checks if c.family == f"Omega_{chain.anchor}({anchor})"]
        report.checks[t] = checks
    return report


def compare_dbb(a: TrajectoryEnsemble, b: TrajectoryEnsemble, integrator=None, **extra) -> ComparisonReport:
    """Per-time RMS and max distance between paired particles of two ensembles.

    ``integrator`` is an optional (times, error) pair from :func:`integrator_error`,
    interpolated onto the ensemble times.
    """
    if a.positions.shape != b.positions.shape or not np.allclose(a.times, b.times):
        raise ValueError("ensembles differ in shape or time grid")
    if a.seed != b.seed:
        raise ValueError("paired comparison needs matching seeds")
    d = np.linalg.norm(a.positions - b.positions, axis=2)
    rms = np.sqrt(np.mean(d ** 2, axis=1))
    err = None
    if integrator is not None:
        t_err, e = integrator
        err = np.interp(a.times, t_err, e)
    return ComparisonReport(a.times.copy(), rms, d.max(axis=1), err, **extra)
