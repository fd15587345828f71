"""Probability currents, dBB velocities, the structure tensors f, F, g and the
antisymmetric correction W that makes a causal Hamiltonian possible.

For two axes only the (1, 2) components are stored; the (2, 1) components are
their negatives and the diagonals vanish.  The W equation

    (d2 g) d1 W - (d1 g) d2 W = F,      g = f / |psi|^2,

is solved either by tracing level curves of g from the section x1 = const or
by a regularized sparse least-squares solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from ._numerics import (
    DENSITY_FLOOR,
    centered_gradient,
    centered_gradient4,
    erode,
    resolved_mask,
    spectral_derivative,
    time_derivative,
    wavenumbers,
)
from .marginal_chain import MomentumMap
from .wavepacket import GridSpec, WavefunctionState, gradient

#: |grad g| below this fraction of its typical size marks a stationary point
STATIONARY_TOL = 1e-6
_TINY = np.finfo(float).tiny ** 0.5

#: core |grad g| below this (scaled) means g carries no information: W = 0
DEGENERATE_TOL = 1e-2
#: Tikhonov weight on ||grad W||^2 in the least-squares solve
TIKHONOV = 1e-6
#: relative density band over which condition_W fades W to zero
TAPER_BAND = (1e-5, 1e-3)
#: Gaussian low-pass width of condition_W in grid cells
SMOOTH_WIDTH = 2.0


class ClosedCharacteristicWarning(RuntimeWarning):
    """A closed level curve of g carries a nonzero loop integral of the source."""


@dataclass(frozen=True)
class CurrentField:
    grid: GridSpec
    j: np.ndarray
    valid: np.ndarray
    time: float


@dataclass(frozen=True)
class VelocityField:
    grid: GridSpec
    v: np.ndarray
    valid: np.ndarray
    time: float
    provenance: str = "dbb"

    def scaled(self, factor: float) -> "VelocityField":
        return replace(self, v=self.v * factor, provenance=self.provenance + "-scaled")


@dataclass(frozen=True)
class StructureTensors:
    """f12, optional F12 and g12 = f12 / |psi|^2 on one time slice.

    ``region`` marks points where these map-derived fields are resolved.
    """

    grid: GridSpec
    f12: np.ndarray
    g12: np.ndarray | None
    region: np.ndarray
    time: float
    F12: np.ndarray | None = None

    def component(self, name: str, i: int, j: int) -> np.ndarray:
        base = {"f": self.f12, "F": self.F12, "g": self.g12}[name]
        if i == j:
            return np.zeros_like(base)
        return base if (i, j) == (0, 1) else -base


@dataclass(frozen=True)
class Gauge:
    """Arbitrary function h(g12) added to W; zero unless tabulated."""

    kind: str = "zero"
    g_values: tuple[float, ...] = ()
    h_values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("zero", "tabulated"):
            raise ValueError(f"unknown gauge kind {self.kind!r}")
        if self.kind == "tabulated":
            g = np.asarray(self.g_values, dtype=float)
            if len(g) < 2 or len(g) != len(self.h_values) or np.any(np.diff(g) <= 0):
                raise ValueError("tabulated gauge needs increasing g values with matching h values")

    def __call__(self, g: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(np.asarray(g, dtype=float))
        return np.interp(g, self.g_values, self.h_values)

    @classmethod
    def from_function(cls, fn: Callable, g_range: tuple[float, float], samples: int = 4097) -> "Gauge":
        g = np.linspace(*g_range, samples)
        return cls("tabulated", tuple(g), tuple(fn(g)))


@dataclass(frozen=True)
class ResidualSummary:
    max: float
    rms: float
    points: int

    @classmethod
    def of(cls, field_: np.ndarray, mask: np.ndarray) -> "ResidualSummary":
        vals = field_[mask]
        if vals.size == 0:
            return cls(0.0, 0.0, 0)
        return cls(float(np.abs(vals).max()), float(np.sqrt(np.mean(vals ** 2))), int(vals.size))

    def as_dict(self) -> dict:
        return {"max": self.max, "rms": self.rms, "points": self.points}


@dataclass(frozen=True)
class AntisymmetricField:
    grid: GridSpec
    W12: np.ndarray
    gauge: Gauge
    method: str
    time: float
    region: np.ndarray
    residual: ResidualSummary
    baseline: ResidualSummary
    diagnostics: dict = field(default_factory=dict)

    @property
    def W21(self) -> np.ndarray:
        return -self.W12

    @property
    def reduction(self) -> float:
        """RMS residual with W = 0 over RMS residual with the solved W."""
        return self.baseline.rms / max(self.residual.rms, 1e-300)


# -- currents and dBB velocities ------------------------------------------------

def probability_current(state: WavefunctionState, masses) -> CurrentField:
    """j_i = Re[psi* (-i / m_i) d_i psi] with spectral derivatives."""
    n = state.grid.ndim
    m = np.broadcast_to(np.asarray(masses, dtype=float), (n,))
    grads = gradient(state)
    j = np.stack([np.imag(np.conj(state.amplitudes) * grads[d]) / m[d] for d in range(n)])
    return CurrentField(state.grid, j, state.valid_mask(), state.time)


def dbb_velocity(current: CurrentField, rho: np.ndarray) -> VelocityField:
    """v_B = j / |psi|^2 on valid points, zero elsewhere."""
    valid = current.valid & (rho > DENSITY_FLOOR * rho.max())
    v = np.divide(current.j, rho[None], out=np.zeros_like(current.j), where=valid[None])
    return VelocityField(current.grid, v, valid, current.time, "dbb")


# -- structure tensors ----------------------------------------------------------

def _require_2d(grid: GridSpec):
    if grid.ndim != 2:
        raise ValueError("structure tensors and W exist for two axes only")


def f_tensor(mmap: MomentumMap, rho: np.ndarray | None = None) -> StructureTensors:
    """f12 = d1 p2 - d2 p1 by centered differences; g12 when the density is given."""
    grid = mmap.grid
    _require_2d(grid)
    h1, h2 = grid.spacing
    p1, p2 = mmap.components
    f = centered_gradient(p2, h1, 0) - centered_gradient(p1, h2, 1)
    if rho is None:
        return StructureTensors(grid, f, None, np.asarray(mmap.valid), mmap.time)
    region = resolved_mask(rho, mmap.valid)
    valid = rho > DENSITY_FLOOR * rho.max()
    g = np.divide(f, rho, out=np.zeros_like(f), where=valid)
    return StructureTensors(grid, f, g, region, mmap.time)


def _transport(f: np.ndarray, v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """d1(f v1) + d2(f v2), the spatial part of F for antisymmetric f."""
    h1, h2 = grid.spacing
    return centered_gradient(f * v[0], h1, 0) + centered_gradient(f * v[1], h2, 1)


def F_tensor(slices, v_b: VelocityField, at: int = 1) -> StructureTensors:
    """F12 = d_t f12 + d1(f12 v1B) + d2(f12 v2B) at slice ``at`` of three.

    The time derivative is central for ``at = 1`` and second-order one-sided
    at the ends.
    """
    slices = list(slices)
    if len(slices) != 3:
        raise ValueError("F needs structure tensors at three consecutive times")
    mid = slices[at]
    _require_2d(mid.grid)
    if abs(v_b.time - mid.time) > 1e-9 * max(1.0, abs(mid.time)):
        raise ValueError("velocity and structure tensors are at different times")
    dfdt = time_derivative([s.f12 for s in slices], [s.time for s in slices], at)
    F = dfdt + _transport(mid.f12, v_b.v, mid.grid)
    return replace(mid, F12=F)


# -- W solvers --------------------------------------------------------------------

def w_equation_residual(tensors: StructureTensors, W: np.ndarray) -> np.ndarray:
    """(d2 g) d1 W - (d1 g) d2 W - F by centered differences."""
    h1, h2 = tensors.grid.spacing
    g = tensors.g12
    lhs = (centered_gradient(g, h2, 1) * centered_gradient(W, h1, 0)
           - centered_gradient(g, h1, 0) * centered_gradient(W, h2, 1))
    return lhs - tensors.F12


def _solve_region(tensors: StructureTensors, rho: np.ndarray, grad_scale: float | None = None):
    """Resolved points where |grad g| is not stationary.

    ``grad_scale`` is the natural size of |grad g|; without it the core median
    is used.  Returns (mask, dg1, dg2, norm, typical, degenerate).
    """
    h1, h2 = tensors.grid.spacing
    g = tensors.g12
    dg1 = centered_gradient(g, h1, 0)
    dg2 = centered_gradient(g, h2, 1)
    norm = np.hypot(dg1, dg2)
    region = tensors.region
    # typical size from the high-density core, where the solution matters most
    core = region & (rho > 0.1 * rho.max())
    typical = float(np.median(norm[core])) if core.any() else 1.0
    if not typical > 0:
        typical = float(np.max(norm[region])) if region.any() else 1.0
    ref = typical if grad_scale is None else grad_scale
    degenerate = grad_scale is not None and typical < DEGENERATE_TOL * grad_scale
    moving = norm > STATIONARY_TOL * ref
    mask = region & moving
    if degenerate:
        mask = np.zeros_like(mask)
    return mask, dg1, dg2, norm, typical, degenerate


def _length_scale(rho: np.ndarray, grid: GridSpec) -> float:
    X = grid.mesh()
    w = rho / rho.sum()
    var = [np.sum(w * (x - np.sum(w * x)) ** 2) for x in X]
    return float(np.sqrt(np.mean(var)))


def _least_squares(tensors, rho, unknown, mask, dg1, dg2, norm, tail_weight=1.0):
    """Sparse least squares for W on ``unknown`` with W = 0 elsewhere.

    Transport rows are written on ``mask`` (the non-stationary points); the
    remaining unknowns, e.g. the stationary point at the density peak, are
    filled by the regularization so W has no isolated spikes.  The Tikhonov
    term on grad W is weighted by (max(rho) / rho)**tail_weight so the free
    function h(g) is pinned towards zero where the density decays.
    """
    grid = tensors.grid
    h1, h2 = grid.spacing
    L = _length_scale(rho, grid)
    core = mask & (rho > 0.1 * rho.max())
    typical = float(np.median(norm[core])) if core.any() else float(np.max(norm[mask]))
    # one global nondimensionalization so the operator is O(1) in the core
    scale = L / typical
    shape = grid.shape
    index = -np.ones(shape, dtype=np.intp)
    index[unknown] = np.arange(unknown.sum())
    n_unknown = int(unknown.sum())
    rows, cols, vals = [], [], []
    pi, pj = np.nonzero(mask)
    r = np.arange(len(pi))
    c1 = dg2[pi, pj] * scale / (2 * h1)
    c2 = -dg1[pi, pj] * scale / (2 * h2)
    ni, nj = shape
    for di, dj, coef in ((1, 0, c1), (-1, 0, -c1), (0, 1, c2), (0, -1, -c2)):
        qi, qj = pi + di, pj + dj
        inside = (qi >= 0) & (qi < ni) & (qj >= 0) & (qj < nj)
        col = np.full(r.shape, -1)
        col[inside] = index[qi[inside], qj[inside]]
        keep = col >= 0
        rows.append(r[keep])
        cols.append(col[keep])
        vals.append(coef[keep])
    rhs = [tensors.F12[pi, pj] * scale]
    n_rows = len(pi)
    # Tikhonov rows on every edge touching an unknown; outside neighbors are W = 0
    lam = np.sqrt(TIKHONOV)
    peak = rho.max()
    floor = DENSITY_FLOOR * peak
    for axis, h in ((0, h1), (1, h2)):
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis] = slice(0, shape[axis] - 1)
        hi[axis] = slice(1, None)
        edge = unknown[tuple(lo)] | unknown[tuple(hi)]
        ei, ej = np.nonzero(edge)
        fi, fj = (ei + 1, ej) if axis == 0 else (ei, ej + 1)
        weight = (peak / np.maximum(0.5 * (rho[ei, ej] + rho[fi, fj]), floor)) ** tail_weight
        er = n_rows + np.arange(len(ei))
        n_rows += len(ei)
        for qi, qj, sgn in ((fi, fj, 1.0), (ei, ej, -1.0)):
            col = index[qi, qj]
            keep = col >= 0
            rows.append(er[keep])
            cols.append(col[keep])
            vals.append(sgn * lam * L / h * weight[keep])
        rhs.append(np.zeros(len(ei)))
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_rows, n_unknown))
    b = np.concatenate(rhs)
    # augmented system [[I, A], [A^T, 0]] avoids squaring the condition number
    m, k = A.shape
    K = sparse.bmat([[sparse.identity(m), A], [A.T, None]], format="csc")
    sol = spsolve(K, np.concatenate([b, np.zeros(k)]))[m:]
    W = np.zeros(shape)
    W[unknown] = sol
    return W


class _Interpolant:
    """Cubic spline interpolation of grid fields at scattered points."""

    def __init__(self, grid: GridSpec, fields: dict):
        self.lower = np.asarray(grid.lower, dtype=float)
        self.h = np.asarray(grid.spacing, dtype=float)
        self.coef = {k: ndimage.spline_filter(v, order=3, mode="nearest") for k, v in fields.items()}

    def __call__(self, name: str, pts: np.ndarray) -> np.ndarray:
        idx = ((pts - self.lower) / self.h).T
        return ndimage.map_coordinates(self.coef[name], idx, order=3, mode="nearest", prefilter=False)


class _Tracer:
    """RK4 tracing of level curves of g, accumulating the integral of
    rho^2 F / |rho grad f - f grad rho| along the curve."""

    def __init__(self, tensors: StructureTensors, rho: np.ndarray, mask: np.ndarray, step: float):
        grid = tensors.grid
        h1, h2 = grid.spacing
        f = tensors.f12
        a1 = rho * centered_gradient4(f, h1, 0) - f * centered_gradient4(rho, h1, 0)
        a2 = rho * centered_gradient4(f, h2, 1) - f * centered_gradient4(rho, h2, 1)
        q = rho ** 2 * np.nan_to_num(tensors.F12)
        self.interp = _Interpolant(grid, {"a1": a1, "a2": a2, "q": q, "inside": mask.astype(float),
                                          "g": tensors.g12})
        self.grid = grid
        self.step = step

    def direction(self, pts: np.ndarray):
        a1 = self.interp("a1", pts)
        a2 = self.interp("a2", pts)
        norm = np.hypot(a1, a2)
        safe = np.where(norm > 0, norm, 1.0)
        return np.stack([a2 / safe, -a1 / safe], axis=1), self.interp("q", pts) / safe

    def rhs(self, pts, orient):
        d, src = self.direction(pts)
        return orient[:, None] * d, orient * src

    def rk4(self, x, orient, ds):
        """One RK4 step of arc length ``ds`` (scalar or per point)."""
        ds = np.broadcast_to(np.asarray(ds, dtype=float), (len(x),))
        h = ds[:, None]
        k1x, k1w = self.rhs(x, orient)
        k2x, k2w = self.rhs(x + 0.5 * h * k1x, orient)
        k3x, k3w = self.rhs(x + 0.5 * h * k2x, orient)
        k4x, k4w = self.rhs(x + h * k3x, orient)
        return x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x), ds / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)

    def _land(self, x, orient, d_old, d_new, section):
        """Partial step from ``x`` that ends on the section (two secant updates)."""
        ds = self.step
        lo, hi = np.zeros(len(x)), np.full(len(x), ds)
        f_lo, f_hi = d_old, d_new
        for _ in range(2):
            s = lo - f_lo * (hi - lo) / (f_hi - f_lo)
            nx, _ = self.rk4(x, orient, s)
            f_s = nx[:, 0] - section
            same = np.sign(f_s) == np.sign(f_lo)
            lo, f_lo = np.where(same, s, lo), np.where(same, f_s, f_lo)
            hi, f_hi = np.where(same, hi, s), np.where(same, f_hi, f_s)
        s = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        return self.rk4(x, orient, s)

    def trace(self, starts: np.ndarray, orient: np.ndarray, section: float, max_steps: int):
        """Integrate from ``starts`` with the given orientation.

        Returns the accumulated integral up to the section crossing (NaN when
        the curve leaves the solve region or never crosses) and the crossing
        points.
        """
        n = len(starts)
        pos = starts.astype(float).copy()
        acc = np.zeros(n)
        result = np.full(n, np.nan)
        cross = np.full((n, 2), np.nan)
        on_section = starts[:, 0] == section
        result[on_section] = 0.0
        cross[on_section] = starts[on_section]
        active = np.flatnonzero(~on_section)
        for _ in range(max_steps):
            if active.size == 0:
                break
            x = pos[active]
            o = orient[active]
            nx, dw = self.rk4(x, o, self.step)
            d_old = x[:, 0] - section
            d_new = nx[:, 0] - section
            crossed = np.sign(d_new) != np.sign(d_old)
            if crossed.any():
                ids = active[crossed]
                cx, cw = self._land(x[crossed], o[crossed], d_old[crossed], d_new[crossed], section)
                result[ids] = acc[ids] + cw
                cross[ids] = cx
            left = self.interp("inside", nx) < 0.5
            pos[active] = nx
            acc[active] += dw
            active = active[~(crossed | left)]
        return result, cross

    def loop(self, starts: np.ndarray, max_steps: int):
        """Loop integrals over closed level curves through ``starts``.

        Seeds lie on the section; a loop closes at the second crossing on the
        seed's side of the section, landed exactly on the section.
        """
        n = len(starts)
        pos = starts.astype(float).copy()
        acc = np.zeros(n)
        mag = np.zeros(n)
        crossings = np.zeros(n, dtype=int)
        result = np.full(n, np.nan)
        total = np.full(n, np.nan)
        section = starts[:, 0]
        orient = np.ones(n)
        active = np.arange(n)
        for _ in range(max_steps):
            if active.size == 0:
                break
            x = pos[active]
            o = orient[active]
            nx, dw = self.rk4(x, o, self.step)
            d_old = x[:, 0] - section[active]
            d_new = nx[:, 0] - section[active]
            crossed = (np.sign(d_new) != np.sign(d_old)) & (d_old != 0)
            crossings[active[crossed]] += 1
            done = crossed & (crossings[active] == 2)
            if done.any():
                ids = active[done]
                cx, cw = self._land(x[done], o[done], d_old[done], d_new[done], section[ids])
                closes = np.abs(cx[:, 1] - starts[ids, 1]) < 0.5 * self.step
                result[ids] = np.where(closes, acc[ids] + cw, np.nan)
                total[ids] = mag[ids] + np.abs(cw)
            left = self.interp("inside", nx) < 0.5
            pos[active] = nx
            acc[active] += dw
            mag[active] += np.abs(dw)
            active = active[~(done | left)]
        return result, total


LOOP_TOLERANCE = 1e-2


def _characteristics(tensors, rho, mask, gauge: Gauge, section: float, step: float | None):
    grid = tensors.grid
    h = min(grid.spacing)
    ds = step if step is not None else 0.25 * h
    extent = sum(hi - lo for lo, hi in zip(grid.lower, grid.upper))
    max_steps = int(np.ceil(2 * extent / ds))
    tracer = _Tracer(tensors, rho, mask, ds)
    X = grid.mesh()
    pts = np.column_stack([X[0][mask], X[1][mask]])
    d, _ = tracer.direction(pts)
    dist = pts[:, 0] - section
    orient = np.where(d[:, 0] * dist > 0, -1.0, 1.0)

    def solve_at(points, o):
        acc, cross = tracer.trace(points, o, section, max_steps)
        h_cross = np.where(np.isfinite(acc), gauge(np.nan_to_num(tracer.interp("g", np.nan_to_num(cross)))), np.nan)
        return h_cross - acc

    W_pts = solve_at(pts, orient)
    traced = np.isfinite(W_pts)
    W = np.zeros(grid.shape)
    W[mask] = np.where(traced, W_pts, 0.0)
    traced_mask = np.zeros(grid.shape, dtype=bool)
    traced_mask[mask] = traced

    # residual on traced grid points from neighbours re-traced along the curve
    delta = h / 16
    # the difference stencil must not straddle the section itself
    # and stays two cells clear of the region frame
    probe = traced & (np.abs(pts[:, 0] - section) > 1.01 * delta) & erode(mask, 2)[mask]
    tp = pts[probe]
    to = orient[probe]
    w_plus = solve_at(tracer.rk4(tp, to, delta)[0], to)
    w_minus = solve_at(tracer.rk4(tp, to, -delta)[0], to)
    h1, h2 = grid.spacing
    f = tensors.f12
    a1 = rho * centered_gradient4(f, h1, 0) - f * centered_gradient4(rho, h1, 0)
    a2 = rho * centered_gradient4(f, h2, 1) - f * centered_gradient4(rho, h2, 1)
    grad_g = (np.hypot(a1, a2) / np.where(rho > 0, rho, 1.0) ** 2)[mask][probe]
    F_nodes = tensors.F12[mask][probe]
    F_est = grad_g * to * (w_plus - w_minus) / (2 * delta)
    ok = np.isfinite(F_est)
    traced_residual = F_est[ok] - F_nodes[ok]
    scale = np.sqrt(np.mean(F_nodes[ok] ** 2)) if ok.any() else 1.0

    # loop integrals of the source over closed level curves through the section
    axis2 = grid.axes[1]
    seeds = np.column_stack([np.full(axis2.shape, section), axis2])
    inside = tracer.interp("inside", seeds) > 0.5
    loops, total = tracer.loop(seeds[inside], max_steps)
    closed = np.isfinite(loops)
    rel = np.abs(loops[closed]) / np.maximum(total[closed], 1e-300) if closed.any() else np.zeros(0)
    worst = float(rel.max()) if rel.size else 0.0
    if worst > LOOP_TOLERANCE:
        warnings.warn(f"closed characteristics with nonzero loop integral (relative {worst:.3g}); "
                      "the W equation has no single-valued solution there", ClosedCharacteristicWarning,
                      stacklevel=3)
    diag = {
        "traced_fraction": float(traced.mean()) if traced.size else 0.0,
        "traced_residual_max": float(np.abs(traced_residual).max()) if traced_residual.size else 0.0,
        "traced_residual_rms": float(np.sqrt(np.mean(traced_residual ** 2))) if traced_residual.size else 0.0,
        "traced_relative_rms": (float(np.sqrt(np.mean(traced_residual ** 2)) / scale)
                                if traced_residual.size and scale > 0 else 0.0),
        "traced_points": int(traced_residual.size),
        "closed_loops": int(closed.sum()),
        "loop_relative_max": worst,
        "loop_integral_max": float(np.abs(loops[closed]).max()) if closed.any() else 0.0,
    }
    return W, traced_mask, diag


def solve_W(tensors: StructureTensors, rho: np.ndarray, gauge: Gauge | None = None,
            method: str = "least_squares", section: float = 0.0,
            step: float | None = None, tail_weight: float = 1.0,
            grad_scale: float | None = None) -> AntisymmetricField:
    """Solve for W12 on the resolved, non-stationary region (W = 0 elsewhere).

    ``method`` is ``"least_squares"`` or ``"characteristics"``; ``tail_weight``
    sets how strongly the least-squares regularization grows as rho decays.
    ``grad_scale`` is the natural size of |grad g12|; when given, stationary
    points are those below 1e-6 of it, and a map whose core |grad g12| is below
    1e-2 of it is treated as degenerate (W = 0).
    """
    _require_2d(tensors.grid)
    if tensors.F12 is None or tensors.g12 is None:
        raise ValueError("solve_W needs tensors carrying F12 and g12")
    gauge = gauge or Gauge()
    mask, dg1, dg2, norm, typical, degenerate = _solve_region(tensors, rho, grad_scale)
    diag = {"typical_grad_g": float(typical), "unknowns": int(mask.sum()), "degenerate": bool(degenerate)}
    if method == "least_squares":
        unknown = tensors.region & ~np.bool_(degenerate)
        W = (_least_squares(tensors, rho, unknown, mask, dg1, dg2, norm, tail_weight) if mask.any()
             else np.zeros(tensors.grid.shape))
        W = np.where(unknown & mask.any(), W + gauge(tensors.g12), 0.0)
    elif method == "characteristics" and not mask.any():
        W = np.zeros(tensors.grid.shape)
    elif method == "characteristics":
        W, traced, extra = _characteristics(tensors, rho, mask, gauge, section, step)
        diag.update(extra)
    else:
        raise ValueError(f"unknown W solver {method!r}")
    check = erode_for_residual(mask)
    residual = ResidualSummary.of(w_equation_residual(tensors, W), check)
    baseline = ResidualSummary.of(tensors.F12, check)
    if method == "characteristics" and diag.get("traced_points") and diag["loop_relative_max"] <= LOOP_TOLERANCE:
        # the equation is a derivative along level curves of g; the grid stencil
        # also differentiates the gauge freedom h(g) across curves, which is zero
        # only in the continuum, so the along-curve residual is the reported one.
        # Open loops leave a jump at the section that only the grid residual sees.
        diag["grid_residual"] = residual.as_dict()
        residual = ResidualSummary(diag["traced_residual_max"], diag["traced_residual_rms"], diag["traced_points"])
    return AntisymmetricField(tensors.grid, W, gauge, method, tensors.time, mask, residual, baseline, diag)


def condition_W(W: AntisymmetricField, tensors: StructureTensors, rho: np.ndarray,
                band: tuple[float, float] = TAPER_BAND, width: float = SMOOTH_WIDTH) -> AntisymmetricField:
    """Fade W to zero across the relative density ``band`` (raised cosine in
    log rho) and low-pass it with a Gaussian of ``width`` grid cells.

    Spectral derivatives are non-local: grid-scale roughness or a cut-off
    edge in W leaves slowly decaying ripples in curl W that explode once
    divided by the tail density.  The conditioned W keeps the correction
    velocity bounded while div curl W still cancels exactly.
    """
    grid = W.grid
    r = rho / rho.max()
    lo, hi = np.log10(band[0]), np.log10(band[1])
    u = np.clip((np.log10(np.maximum(r, 1e-300)) - lo) / (hi - lo), 0.0, 1.0)
    tau = 0.5 - 0.5 * np.cos(np.pi * u)
    spec = np.fft.fft2(W.W12 * tau)
    for d in range(2):
        k = wavenumbers(grid.points[d], grid.spacing[d])
        shape = [1, 1]
        shape[d] = -1
        spec = spec * np.exp(-0.5 * (k * width * grid.spacing[d]) ** 2).reshape(shape)
    W12 = np.fft.ifft2(spec).real
    diag = dict(W.diagnostics)
    diag["raw_residual"] = W.residual.as_dict()
    diag["conditioned"] = {"band": list(band), "width": width}
    residual = ResidualSummary.of(w_equation_residual(tensors, W12), erode_for_residual(W.region))
    return replace(W, W12=W12, residual=residual, diagnostics=diag)


def erode_for_residual(mask: np.ndarray) -> np.ndarray:
    """Points whose centered stencil stays inside ``mask``."""
    return erode(mask, 1)


# -- assembled velocity and residuals --------------------------------------------

def curl_W(W: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(d2 W12, -d1 W12), the divergence of the antisymmetric tensor, spectrally."""
    h1, h2 = grid.spacing
    return np.stack([spectral_derivative(W, h2, 1), -spectral_derivative(W, h1, 0)])


def assemble_velocity(v_b: VelocityField, W: AntisymmetricField | None, rho: np.ndarray) -> VelocityField:
    """v_i = v_iB + (sum_l d_l W_il) / |psi|^2 on valid points."""
    if W is None or v_b.grid.ndim == 1:
        return replace(v_b, provenance="assembled")
    valid = v_b.valid
    corr = curl_W(W.W12, v_b.grid)
    # the correction flux curl W is carried wherever rho > 0 so that its
    # divergence cancels exactly; only valid points are reported as valid
    extra = np.divide(corr, rho[None], out=np.zeros_like(corr), where=(rho > _TINY)[None])
    return VelocityField(v_b.grid, v_b.v + extra, valid, v_b.time, "assembled")


def continuity_residual(v: VelocityField, rho: np.ndarray, current: CurrentField):
    """sum_i d_i (v_i |psi|^2 - j_i), spectral, with a summary on valid points."""
    grid = v.grid
    flux = v.v * rho[None] - current.j
    res = sum(spectral_derivative(flux[d], grid.spacing[d], d) for d in range(grid.ndim))
    return res, ResidualSummary.of(res, v.valid)


def integrability_residual(v: VelocityField, slices, at: int = 1):
    """d_t f12 + d1(f12 v1) + d2(f12 v2) at slice ``at``; zero when a causal
    Hamiltonian exists.  Summarized on the resolved region of that slice."""
    slices = list(slices)
    mid = slices[at]
    _require_2d(mid.grid)
    dfdt = time_derivative([s.f12 for s in slices], [s.time for s in slices], at)
    res = dfdt + _transport(mid.f12, v.v, mid.grid)
    return res, ResidualSummary.of(res, erode_for_residual(mid.region))
