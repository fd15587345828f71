"""Causal Hamiltonian H_c = sum (p_i - A_i)^2 / 2 m_i + V built from a momentum
map and the assembled velocity field, plus the de Broglie-Bohm reference
Hamiltonian with its quantum potential."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._numerics import centered_gradient, erode, interp_grid, spectral_derivative, time_derivative
from .marginal_chain import MomentumMap
from .velocity_solver import ResidualSummary, VelocityField
from .wavepacket import GridSpec, PotentialSpec, WavefunctionState

#: scaled curl above which integrate_hc attaches a path-dependence warning
CURL_TOL = 1e-2


class OutOfGridError(ValueError):
    """A point lies outside the grid on which the fields are defined."""


class PathDependenceWarning(RuntimeWarning):
    """The Hamiltonian gradient has a curl above tolerance."""


@dataclass(frozen=True)
class HcGradient:
    """G_i = d_i Hc_hat together with the material derivative d p_i / dt."""

    grid: GridSpec
    G: np.ndarray
    dpdt: np.ndarray
    valid: np.ndarray
    time: float

    def curl(self) -> tuple[np.ndarray, ResidualSummary]:
        """d1 G2 - d2 G1 (n = 2) with a summary on interior valid points."""
        if self.grid.ndim != 2:
            raise ValueError("curl is defined for n = 2")
        h1, h2 = self.grid.spacing
        c = centered_gradient(self.G[1], h1, 0) - centered_gradient(self.G[0], h2, 1)
        inner = erode(self.valid, 1)
        return np.where(inner, c, 0.0), ResidualSummary.of(c, inner)


@dataclass(frozen=True)
class HcIntegral:
    Hc: np.ndarray
    valid: np.ndarray
    anchor: tuple[int, ...]
    path_discrepancy: ResidualSummary
    curl: ResidualSummary | None
    warning: str | None = None


@dataclass(frozen=True)
class CausalHamiltonianFields:
    grid: GridSpec
    A: np.ndarray
    V: np.ndarray
    Hc: np.ndarray
    masses: np.ndarray
    time: float
    valid: np.ndarray
    anchor: tuple[int, ...]


@dataclass(frozen=True)
class DbbHamiltonianFields:
    grid: GridSpec
    Q: np.ndarray
    U: np.ndarray
    masses: np.ndarray
    valid: np.ndarray
    time: float


def _masses(masses, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(masses, dtype=float), (n,)).copy()


def _check_same(grid: GridSpec, *others):
    for o in others:
        if o.grid != grid:
            raise ValueError("fields live on different grids")


# -- gradient and line integration ------------------------------------------------

def hc_gradient(maps, v: VelocityField, at: int = 1, region: np.ndarray | None = None) -> HcGradient:
    """d_i Hc_hat = -d p_i/dt + sum_k (d_i p_k) v_k with
    d p_i/dt = d_t p_i + sum_k (d_k p_i) v_k; centered differences throughout."""
    maps = list(maps)
    if len(maps) != 3:
        raise ValueError("hc_gradient needs the momentum map at three times")
    mid = maps[at]
    grid = mid.grid
    _check_same(grid, v, *maps)
    if abs(v.time - mid.time) > 1e-12:
        raise ValueError(f"velocity at t={v.time} does not match map at t={mid.time}")
    n = grid.ndim
    p = mid.components
    dt_p = time_derivative([m.components for m in maps], [m.time for m in maps], at)
    # jac[i, k] = d_k p_i
    jac = np.stack([np.stack([centered_gradient(p[i], grid.spacing[k], k) for k in range(n)])
                    for i in range(n)])
    vel = np.where(v.valid[None], v.v, 0.0)
    dpdt = dt_p + np.einsum("ik...,k...->i...", jac, vel)
    G = -dpdt + np.einsum("ki...,k...->i...", jac, vel)
    valid = v.valid.copy()
    for m in maps:
        valid &= m.valid
    if region is not None:
        valid &= region
    valid = erode(valid, 1)
    zero = ~valid[None]
    return HcGradient(grid, np.where(zero, 0.0, G), np.where(zero, 0.0, dpdt), valid, mid.time)


def _cumulative(f: np.ndarray, h: float, axis: int, start: int) -> np.ndarray:
    """Trapezoid integral of ``f`` along ``axis`` measured from index ``start``."""
    f = np.moveaxis(f, axis, 0)
    c = np.concatenate([np.zeros((1,) + f.shape[1:]), np.cumsum(0.5 * h * (f[1:] + f[:-1]), axis=0)])
    c = c - c[start]
    return np.moveaxis(c, 0, axis)


def _default_anchor(valid: np.ndarray, rho: np.ndarray | None) -> tuple[int, ...]:
    if rho is not None:
        return tuple(int(i) for i in np.unravel_index(np.argmax(rho), rho.shape))
    idx = np.argwhere(valid)
    if len(idx) == 0:
        return tuple(s // 2 for s in valid.shape)
    return tuple(int(i) for i in np.round(idx.mean(axis=0)).astype(int))


def integrate_hc(gradient: HcGradient, rho: np.ndarray | None = None, anchor: tuple[int, ...] | None = None,
                 value: float = 0.0, curl_scale: float = 1.0) -> HcIntegral:
    """Line-integrate G from the anchor (default: maximum of ``rho``) along
    axis-ordered paths; for n = 2 the x1-first and x2-first paths are averaged.

    ``curl_scale`` converts the curl summary to scaled units for the warning.
    """
    grid = gradient.grid
    anchor = tuple(anchor) if anchor is not None else _default_anchor(gradient.valid, rho)
    G = gradient.G
    h = grid.spacing
    inner = gradient.valid
    if grid.ndim == 1:
        H = _cumulative(G[0], h[0], 0, anchor[0]) + value
        return HcIntegral(H, inner, anchor, ResidualSummary(0.0, 0.0, int(inner.sum())), None)
    a1, a2 = anchor
    row = _cumulative(G[0][:, a2], h[0], 0, a1)          # along x1 at x2 = a2
    col = _cumulative(G[1][a1, :], h[1], 0, a2)          # along x2 at x1 = a1
    x1_first = row[:, None] + _cumulative(G[1], h[1], 1, a2)
    x2_first = col[None, :] + _cumulative(G[0], h[0], 0, a1)
    H = 0.5 * (x1_first + x2_first) + value
    disc = ResidualSummary.of(x1_first - x2_first, inner)
    _, curl = gradient.curl()
    message = None
    if curl.max / curl_scale > CURL_TOL:
        message = (f"Hamiltonian gradient curl {curl.max / curl_scale:.3g} (scaled) exceeds {CURL_TOL}; "
                   "Hc depends on the integration path")
        warnings.warn(message, PathDependenceWarning, stacklevel=2)
    return HcIntegral(H, inner, anchor, disc, curl, message)


# -- ansatz fields ---------------------------------------------------------------

def vector_potential(mmap: MomentumMap, v: VelocityField, masses) -> np.ndarray:
    """A_i = p_i - m_i v_i."""
    _check_same(mmap.grid, v)
    m = _masses(masses, mmap.grid.ndim)
    return mmap.components - m.reshape((-1,) + (1,) * mmap.grid.ndim) * v.v


def scalar_potential(Hc: np.ndarray, mmap: MomentumMap, A: np.ndarray, masses) -> np.ndarray:
    """V = Hc_hat - sum_i (p_i - A_i)^2 / 2 m_i."""
    m = _masses(masses, mmap.grid.ndim).reshape((-1,) + (1,) * mmap.grid.ndim)
    return Hc - np.sum((mmap.components - A) ** 2 / (2 * m), axis=0)


def causal_hamiltonian(maps, v: VelocityField, masses, rho: np.ndarray | None = None, at: int = 1,
                       region: np.ndarray | None = None, curl_scale: float = 1.0):
    """Gradient, integration and ansatz in one call; returns (fields, gradient, integral)."""
    grad = hc_gradient(maps, v, at, region)
    integral = integrate_hc(grad, rho, curl_scale=curl_scale)
    mmap = list(maps)[at]
    A = vector_potential(mmap, v, masses)
    V = scalar_potential(integral.Hc, mmap, A, masses)
    fields = CausalHamiltonianFields(mmap.grid, A, V, integral.Hc, _masses(masses, mmap.grid.ndim),
                                     mmap.time, grad.valid, integral.anchor)
    return fields, grad, integral


def evaluate_hamiltonian(fields: CausalHamiltonianFields, x, p) -> np.ndarray | float:
    """sum (p_i - A_i(x))^2 / 2 m_i + V(x) with multilinear interpolation."""
    grid = fields.grid
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    single = x.ndim == 1
    xs, ps = np.atleast_2d(x), np.atleast_2d(p)
    if xs.shape[1] != grid.ndim or ps.shape != xs.shape:
        raise ValueError("x and p must have one coordinate per grid axis")
    if not np.all(grid.contains(xs)):
        raise OutOfGridError("point outside the grid")
    A = np.stack([interp_grid(a, grid.axes, xs) for a in fields.A], axis=1)
    V = interp_grid(fields.V, grid.axes, xs)
    H = np.sum((ps - A) ** 2 / (2 * fields.masses), axis=1) + V
    return float(H[0]) if single else H


# -- Hamilton's equations ----------------------------------------------------------

def hamilton_velocity_check(fields: CausalHamiltonianFields, mmap: MomentumMap, v: VelocityField,
                            delta: float = 1e-4) -> ResidualSummary:
    """Centered difference dH/dp_k at p = p(x) on grid nodes minus v_k."""
    n = fields.grid.ndim
    p = mmap.components
    mask = fields.valid
    errs = []
    for k in range(n):
        shift = np.zeros((n,) + (1,) * n)
        shift[k] = delta
        hp = np.sum((p + shift - fields.A) ** 2 / (2 * fields.masses.reshape(shift.shape)), axis=0)
        hm = np.sum((p - shift - fields.A) ** 2 / (2 * fields.masses.reshape(shift.shape)), axis=0)
        errs.append((hp - hm) / (2 * delta) - v.v[k])
    return ResidualSummary.of(np.max(np.abs(np.stack(errs)), axis=0), mask)


def hamilton_force_check(fields: CausalHamiltonianFields, mmap: MomentumMap, v: VelocityField,
                         gradient: HcGradient) -> ResidualSummary:
    """-dH/dx_i at fixed p = p(x) minus the material derivative d p_i/dt."""
    grid = fields.grid
    n = grid.ndim
    m = fields.masses.reshape((-1,) + (1,) * n)
    kin = (mmap.components - fields.A) / m
    errs = []
    for i in range(n):
        dA = np.stack([centered_gradient(fields.A[k], grid.spacing[i], i) for k in range(n)])
        dHdx = centered_gradient(fields.V, grid.spacing[i], i) - np.sum(kin * dA, axis=0)
        errs.append(-dHdx - gradient.dpdt[i])
    return ResidualSummary.of(np.max(np.abs(np.stack(errs)), axis=0), erode(fields.valid, 1))


# -- de Broglie-Bohm reference -------------------------------------------------------

def dbb_hamiltonian(state: WavefunctionState, potential: PotentialSpec) -> DbbHamiltonianFields:
    """Quantum potential Q = -sum_i d_i^2 R / (2 m_i R), spectral, and U."""
    grid = state.grid
    m = potential.masses_for(grid.ndim)
    R = np.abs(state.amplitudes)
    valid = state.valid_mask()
    lap = sum(spectral_derivative(R, grid.spacing[d], d, order=2) / (2 * m[d]) for d in range(grid.ndim))
    Q = -np.divide(lap, R, out=np.zeros_like(R), where=valid)
    return DbbHamiltonianFields(grid, Q, potential.values(grid), m, valid, state.time)


def dbb_limit_check(fields: CausalHamiltonianFields, dbb: DbbHamiltonianFields) -> dict:
    """max |A| and max |V - (U + Q)| after removing the anchor constant."""
    mask = fields.valid & dbb.valid
    diff = fields.V - (dbb.U + dbb.Q)
    diff = diff - diff[fields.anchor]
    return {"A": ResidualSummary.of(np.max(np.abs(fields.A), axis=0), mask),
            "V": ResidualSummary.of(diff, mask)}
