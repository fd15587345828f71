"""Momentum maps from chained conditional-CDF matching.

A chain of complete commuting sets (CCS) is a sequence of representation
tags such as ``("xx", "px", "pp")``; consecutive tags differ on one axis.
Every adjacent pair fixes one momentum component through the match

    CDF_target(p_a | cond) = CDF_source(eps * x_a | cond),

solved by monotone inversion of trapezoid cumulative tables.  The tables are
built on oversampled grids (zero padding in position for finer momentum
sampling, spectral interpolation for finer position sampling) and the
resulting maps are reported on the state's own position grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstwo

from ._numerics import (
    PiecewiseLinearCDF,
    interp_grid,
    leftmost_inverse,
    sample_linear_cell,
    trapezoid_cumulative,
)
from .wavepacket import GridSpec, WavefunctionState, density, polar_decompose, to_mixed_representation

#: conditioning slices lighter than this fraction of the heaviest are invalid
SLICE_FLOOR = 1e-8

#: refinement factor of the matching tables per axis count
DEFAULT_OVERSAMPLE = {1: 32, 2: 8}

_CHAINS = {
    1: {1: ("x", "p")},
    2: {
        1: ("xx", "px", "pp"),
        2: ("xp", "xx", "px"),
        3: ("xx", "xp", "pp"),
    },
}


class InvalidMapError(RuntimeError):
    """Too much probability mass sits where the momentum map is undefined."""


@dataclass(frozen=True)
class CCSChain:
    tags: tuple[str, ...]
    variant: int

    @property
    def ndim(self) -> int:
        return len(self.tags[0])

    @property
    def replaced_axes(self) -> tuple[int, ...]:
        """Axis swapped between tag ``i`` and tag ``i + 1``."""
        out = []
        for a, b in zip(self.tags, self.tags[1:]):
            (axis,) = [d for d in range(self.ndim) if a[d] != b[d]]
            out.append(axis)
        return tuple(out)

    @property
    def anchor(self) -> int:
        """Index of the all-position tag."""
        return self.tags.index("x" * self.ndim)

    def complement(self, index: int) -> str:
        return "".join("p" if c == "x" else "x" for c in self.tags[index])

    def plan(self) -> list[tuple[int, str, str, int]]:
        """Matching steps ordered outward from the all-position tag.

        Each entry is ``(pair, source_tag, target_tag, axis)`` where ``pair``
        indexes the sign vector.
        """
        a = self.anchor
        steps = []
        for i in range(a, len(self.tags) - 1):
            steps.append((i, self.tags[i], self.tags[i + 1], self.replaced_axes[i]))
        for i in range(a, 0, -1):
            steps.append((i - 1, self.tags[i], self.tags[i - 1], self.replaced_axes[i - 1]))
        return steps


def build_chain(n: int, variant: int | str = 1) -> CCSChain:
    """Chain of n + 1 CCS; for n = 2 variants 1, 2, 3 follow the three listed chains."""
    if variant == "default":
        variant = 1
    try:
        variant = int(variant)
        tags = _CHAINS[n][variant]
    except (KeyError, ValueError, TypeError):
        raise ValueError(f"unknown chain variant {variant!r} for n={n}") from None
    return CCSChain(tags, variant)


def sign_branches(n: int) -> list[tuple[int, ...]]:
    return [tuple(s) for s in itertools.product((1, -1), repeat=n)]


def _check_signs(signs, n: int) -> tuple[int, ...]:
    signs = tuple(int(s) for s in signs)
    if len(signs) != n or any(s not in (1, -1) for s in signs):
        raise ValueError(f"sign vector must have {n} entries in {{+1, -1}}, got {signs}")
    return signs


@dataclass(frozen=True)
class CdfTable:
    abscissa: np.ndarray
    values: np.ndarray
    upper: np.ndarray
    mass: float
    valid: bool


def conditional_cdf(rho: np.ndarray, axis: int, index: tuple = (), abscissa: np.ndarray | None = None) -> CdfTable:
    """Normalized trapezoid CDF along ``axis`` of the slice at ``index``.

    ``index`` lists grid indices of the remaining axes.  The slice is invalid
    when its mass is below ``SLICE_FLOOR`` times the heaviest parallel slice.
    """
    rho = np.moveaxis(np.asarray(rho, dtype=float), axis, -1)
    if abscissa is None:
        abscissa = np.arange(rho.shape[-1], dtype=float)
    h = float(abscissa[1] - abscissa[0])
    left, right = trapezoid_cumulative(rho, h)
    masses = left[..., -1]
    row = tuple(index)
    mass = float(masses[row]) if row else float(masses)
    valid = mass > SLICE_FLOOR * masses.max() and mass > 0
    scale = mass if mass > 0 else 1.0
    return CdfTable(abscissa, left[row] / scale, right[row] / scale, mass, bool(valid))


def _invert(c_left, c_right, axis_vals, u, s, dens=None):
    """Leftmost preimage of CDF level ``u`` (survival ``s = 1 - u``), row-wise.

    The lower half is inverted on the left table and the upper half on the
    right table so both tails keep relative precision.
    """
    low = leftmost_inverse(c_left, axis_vals, u, dens)
    high = leftmost_inverse(-c_right, axis_vals, -s, dens)
    return np.where(u <= 0.5, low, high)


def match_condition_invert(target: CdfTable, source: CdfTable, eps: int) -> np.ndarray:
    """Momentum ``p`` at each source abscissa with CDF_target(p) = CDF_source(eps x)."""
    if not (target.valid and source.valid):
        return np.full(source.abscissa.shape, np.nan)
    if eps == 1:
        u, s = source.values, source.upper
    elif eps == -1:
        # reflected source: cumulative taken from the right
        u, s = source.upper, source.values
    else:
        raise ValueError("eps must be +1 or -1")
    return _invert(target.values[None], target.upper[None], target.abscissa, u[None], s[None])[0]


@dataclass
class _Step:
    pair: int
    source: str
    target: str
    axis: int
    cond_axis: int | None
    cond_kind: str | None
    x_fine: np.ndarray
    p_fine: np.ndarray
    cond_fine: np.ndarray | None
    s_left: np.ndarray  # (rows, len x_fine)
    s_right: np.ndarray
    c_left: np.ndarray  # (rows, len p_fine)
    c_right: np.ndarray
    row_valid: np.ndarray
    s_dens: np.ndarray  # node densities matching the tables
    c_dens: np.ndarray


def _fill_invalid_rows(table: np.ndarray, row_valid: np.ndarray) -> np.ndarray:
    if row_valid.all() or not row_valid.any():
        return table
    good = np.flatnonzero(row_valid)
    idx = np.arange(len(row_valid))
    nearest = good[np.abs(idx[:, None] - good[None, :]).argmin(axis=1)]
    return table[nearest]


@dataclass
class ChainRepresentations:
    """Oversampled mixed-representation densities and matching tables of one state."""

    state: WavefunctionState
    chain: CCSChain
    oversample: int
    densities: dict = field(repr=False)
    axes: dict = field(repr=False)
    steps: list = field(repr=False)

    @property
    def grid(self) -> GridSpec:
        return self.state.grid

    def marginal_cdf(self, tag: str, axis: int) -> PiecewiseLinearCDF:
        rho = self.densities[tag]
        ax = self.axes[tag]
        if rho.ndim == 1:
            return PiecewiseLinearCDF(ax[0], rho)
        other = 1 - axis
        h = ax[other][1] - ax[other][0]
        marg = np.trapezoid(rho, dx=h, axis=other)
        return PiecewiseLinearCDF(ax[axis], marg)

    def projection_cdf(self, tag: str, weights: tuple[float, float]):
        """CDF of ``w0 * u + w1 * v`` under the 2-D density of ``tag``."""
        rho = self.densities[tag]
        ua, va = self.axes[tag]
        a, b = weights
        corners = [a * u + b * v for u in (ua[0], ua[-1]) for v in (va[0], va[-1])]
        w = np.linspace(min(corners), max(corners), 4096)
        # line integrals of the bilinear interpolant across the (u, v) plane
        vv = (w[:, None] - a * ua[None, :]) / b
        inside = (vv >= va[0]) & (vv <= va[-1])
        pts = np.column_stack([np.broadcast_to(ua, vv.shape).ravel(), vv.ravel()])
        vals = interp_grid(rho, [ua, va], pts).reshape(vv.shape) * inside
        dens = np.trapezoid(vals, dx=ua[1] - ua[0], axis=1) / abs(b)
        return PiecewiseLinearCDF(w, dens)


def chain_representations(state: WavefunctionState, chain: CCSChain, oversample: int | None = None) -> ChainRepresentations:
    """Mixed-representation densities for every CCS in ``chain`` plus the
    cumulative tables each matching step needs."""
    if chain.ndim != state.grid.ndim:
        raise ValueError("chain and state dimensions differ")
    if oversample is None:
        oversample = DEFAULT_OVERSAMPLE[chain.ndim]
    densities, axes = {}, {}
    for tag in chain.tags:
        mixed = to_mixed_representation(state, tag, oversample)
        densities[tag] = density(mixed)
        axes[tag] = mixed.axes
    steps = []
    for pair, src, tgt, a in chain.plan():
        rs, rt = densities[src], densities[tgt]
        xs, ps = axes[src][a], axes[tgt][a]
        if chain.ndim == 1:
            b, kind, cond = None, None, None
            rs, rt = rs[None], rt[None]
        else:
            b = 1 - a
            kind = src[b]
            cond = axes[src][b]
            rs, rt = np.moveaxis(rs, a, -1), np.moveaxis(rt, a, -1)
        sl, sr = trapezoid_cumulative(rs, xs[1] - xs[0])
        cl, cr = trapezoid_cumulative(rt, ps[1] - ps[0])
        ms, mt = sl[:, -1], cl[:, -1]
        row_valid = (ms > SLICE_FLOOR * ms.max()) & (mt > SLICE_FLOOR * mt.max())
        ms_safe = np.where(ms > 0, ms, 1.0)[:, None]
        mt_safe = np.where(mt > 0, mt, 1.0)[:, None]
        steps.append(_Step(pair, src, tgt, a, b, kind, xs, ps, cond,
                           sl / ms_safe, sr / ms_safe, cl / mt_safe, cr / mt_safe, row_valid,
                           rs, rt))
    return ChainRepresentations(state, chain, oversample, densities, axes, steps)


@dataclass(frozen=True)
class MomentumMap:
    grid: GridSpec
    components: np.ndarray
    signs: tuple[int, ...] | None
    time: float
    variant: int | None
    valid: np.ndarray
    provenance: str = "chain"

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of every component at ``points`` (N, n)."""
        pts = np.atleast_2d(points)
        return np.stack([interp_grid(c, self.grid.axes, pts) for c in self.components], axis=1)

    def scaled(self, factor: float) -> "MomentumMap":
        return MomentumMap(self.grid, self.components * factor, self.signs, self.time,
                           self.variant, self.valid, self.provenance + "-scaled")


@dataclass(frozen=True)
class CoordinateMap:
    momentum_axes: tuple[np.ndarray, ...]
    components: np.ndarray
    signs: tuple[int, ...]
    time: float
    valid: np.ndarray

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.stack([interp_grid(c, list(self.momentum_axes), pts) for c in self.components], axis=1)


def _interp_rows(table: np.ndarray, row_axis: np.ndarray, row_valid: np.ndarray, q: np.ndarray):
    """Linear interpolation across table rows at continuous row coordinate ``q``.

    ``table`` is ``(rows, K)``; ``q`` is ``(..., K)``.  Returns values and a
    validity flag (both bracketing rows valid).
    """
    if table.shape[0] == 1:
        return np.broadcast_to(table[0], q.shape).copy(), np.broadcast_to(row_valid[0], q.shape).copy()
    h = row_axis[1] - row_axis[0]
    m = len(row_axis)
    s = np.clip((q - row_axis[0]) / h, 0.0, m - 1.0)
    i0 = np.minimum(np.floor(s).astype(np.intp), m - 2)
    w = s - i0
    cols = np.broadcast_to(np.arange(table.shape[1]), q.shape)
    vals = (1 - w) * table[i0, cols] + w * table[i0 + 1, cols]
    ok = row_valid[i0] & (row_valid[i0 + 1] | (w == 0))
    return vals, ok


def _forward_table(step: _Step, eps: int, stride: int) -> np.ndarray:
    """Matched momentum for every conditioning row at the coarse x samples."""
    sl = step.s_left[:, ::stride]
    sr = step.s_right[:, ::stride]
    u, s = (sl, sr) if eps == 1 else (sr, sl)
    table = _invert(step.c_left, step.c_right, step.p_fine, u, s, step.c_dens)
    return _fill_invalid_rows(table, step.row_valid)


def _inverse_table(step: _Step, eps: int, stride: int) -> np.ndarray:
    """Matched position for every conditioning row at the coarse p samples."""
    u = step.c_left[:, ::stride]
    s = step.c_right[:, ::stride]
    if eps == 1:
        table = _invert(step.s_left, step.s_right, step.x_fine, u, s, step.s_dens)
    else:
        # S_right(x) = u  <=>  S_left(x) = s ; leftmost preimage either way
        low = leftmost_inverse(-step.s_right, step.x_fine, -u, step.s_dens)
        high = leftmost_inverse(step.s_left, step.x_fine, s, step.s_dens)
        table = np.where(u <= 0.5, low, high)
    return _fill_invalid_rows(table, step.row_valid)


def _resolve(snapshots, chain, oversample) -> ChainRepresentations:
    if isinstance(snapshots, ChainRepresentations):
        if chain is not None and chain.tags != snapshots.chain.tags:
            raise ValueError("representations were built for a different chain")
        return snapshots
    if chain is None:
        chain = build_chain(snapshots.grid.ndim)
    return chain_representations(snapshots, chain, oversample)


def momentum_map(snapshots, chain: CCSChain | None = None, signs=None, oversample: int | None = None) -> MomentumMap:
    """Momentum map p_hat(x) on the state's position grid.

    ``snapshots`` is a :class:`ChainRepresentations` or a
    :class:`WavefunctionState` (representations are then built here).
    """
    reps = _resolve(snapshots, chain, oversample)
    chain = reps.chain
    grid = reps.grid
    n = grid.ndim
    signs = _check_signs(signs if signs is not None else (1,) * n, n)
    r = reps.oversample
    X = grid.mesh()
    comps = [None] * n
    valid = reps.state.valid_mask().copy()
    for step in reps.steps:
        eps = signs[step.pair]
        table = _forward_table(step, eps, r)  # (rows, N_a)
        a = step.axis
        if n == 1:
            vals, ok = _interp_rows(table, np.zeros(1), step.row_valid, np.zeros((1, grid.points[0])))
            comps[a] = vals[0]
            valid &= ok[0]
            continue
        b = step.cond_axis
        cond = X[b] if step.cond_kind == "x" else comps[b]
        # put axis a last so columns line up with the table
        q = np.moveaxis(cond, a, -1)
        vals, ok = _interp_rows(table, step.cond_fine, step.row_valid, q)
        comps[a] = np.moveaxis(vals, -1, a)
        valid &= np.moveaxis(ok, -1, a)
    components = np.stack(comps)
    valid &= np.all(np.isfinite(components), axis=0)
    return MomentumMap(grid, components, signs, reps.state.time, chain.variant, valid)


def inverse_coordinate_map(snapshots, chain: CCSChain | None = None, signs=None,
                           oversample: int | None = None, max_iter: int = 200) -> CoordinateMap:
    """Coordinates x_hat(p) on the state's (non-oversampled) momentum grid.

    Steps are undone from the all-momentum end of the chain backwards.  For a
    chain whose all-position tag is interior the two conditions are coupled
    and are solved by Gauss-Seidel sweeps.
    """
    reps = _resolve(snapshots, chain, oversample)
    chain = reps.chain
    grid = reps.grid
    n = grid.ndim
    signs = _check_signs(signs if signs is not None else (1,) * n, n)
    r = reps.oversample
    paxes = tuple(grid.momentum_axis(d) for d in range(n))
    P = np.meshgrid(*paxes, indexing="ij")
    tables = [_inverse_table(step, signs[step.pair], r) for step in reps.steps]
    valid = np.ones(grid.shape, dtype=bool)
    if n == 1:
        comps = np.stack([tables[0][0]])
        return CoordinateMap(paxes, comps, signs, reps.state.time, valid & np.isfinite(comps[0]))

    def solve(step, table, cond):
        a = step.axis
        q = np.moveaxis(cond, a, -1)
        vals, ok = _interp_rows(table, step.cond_fine, step.row_valid, q)
        return np.moveaxis(vals, -1, a), np.moveaxis(ok, -1, a)

    comps = [None, None]
    if chain.anchor == 0:
        for step, table in reversed(list(zip(reps.steps, tables))):
            b = step.cond_axis
            cond = P[b] if step.cond_kind == "p" else comps[b]
            comps[step.axis], ok = solve(step, table, cond)
            valid &= ok
    else:
        comps = [np.zeros(grid.shape), np.zeros(grid.shape)]
        for _ in range(max_iter):
            prev = [c.copy() for c in comps]
            for step, table in zip(reps.steps, tables):
                comps[step.axis], ok = solve(step, table, comps[step.cond_axis])
            if max(np.abs(c - p).max() for c, p in zip(comps, prev)) < 1e-12:
                break
        for step, table in zip(reps.steps, tables):
            valid &= solve(step, table, comps[step.cond_axis])[1]
    comps = np.stack(comps)
    return CoordinateMap(paxes, comps, signs, reps.state.time, valid & np.all(np.isfinite(comps), axis=0))


def all_branch_maps(snapshots, chain: CCSChain | None = None, oversample: int | None = None) -> dict:
    """The 2^n momentum maps of one state keyed by sign vector."""
    reps = _resolve(snapshots, chain, oversample)
    return {s: momentum_map(reps, signs=s) for s in sign_branches(reps.grid.ndim)}


def dbb_momentum_map(state: WavefunctionState) -> MomentumMap:
    """The de Broglie-Bohm momentum field grad S in map form."""
    polar = polar_decompose(state)
    return MomentumMap(state.grid, polar.grad_s, None, state.time, None, polar.valid, "dbb")


def sample_positions(rho: np.ndarray, axes, n_samples: int, seed: int) -> np.ndarray:
    """Exact samples from the (bi)linear interpolant of a gridded density.

    Uses a Philox counter-based generator; fixed seeds reproduce bit-identical
    samples.
    """
    rng = np.random.Generator(np.random.Philox(int(seed)))
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, None)
    axes = [np.asarray(a, dtype=float) for a in np.atleast_1d(axes)] if isinstance(axes, (list, tuple)) else [np.asarray(axes)]
    if rho.ndim == 1:
        u = rng.random((n_samples, 2))
        return PiecewiseLinearCDF(axes[0], rho).sample(u[:, 0], u[:, 1])[:, None]
    x1, x2 = axes
    h1, h2 = x1[1] - x1[0], x2[1] - x2[0]
    u = rng.random((n_samples, 5))
    # rows of the density are x2-slices of fixed x1 index -> transpose
    slices = rho.T  # slices[j] is the x1 profile at x2_j
    row_mass = np.trapezoid(slices, dx=h1, axis=1)
    marg = PiecewiseLinearCDF(x2, row_mass)
    j = np.clip(np.searchsorted(marg.cum, u[:, 0], side="right") - 1, 0, len(x2) - 2)
    w = sample_linear_cell(row_mass[j], row_mass[j + 1], u[:, 1])
    pos2 = x2[j] + h2 * w
    lo_w = (1 - w) * row_mass[j]
    hi_w = w * row_mass[j + 1]
    pick = np.where(u[:, 2] * (lo_w + hi_w) < lo_w, j, j + 1)
    # per-row piecewise-linear CDFs in one table
    cells = 0.5 * h1 * (slices[:, 1:] + slices[:, :-1])
    cum = np.concatenate([np.zeros((slices.shape[0], 1)), np.cumsum(cells, axis=1)], axis=1)
    cum /= np.where(cum[:, -1:] > 0, cum[:, -1:], 1.0)
    k = np.empty(n_samples, dtype=np.intp)
    for row in np.unique(pick):
        sel = pick == row
        k[sel] = np.searchsorted(cum[row], u[sel, 3], side="right") - 1
    k = np.clip(k, 0, len(x1) - 2)
    t = sample_linear_cell(slices[pick, k], slices[pick, k + 1], u[:, 4])
    pos1 = x1[k] + h1 * t
    return np.column_stack([pos1, pos2])


@dataclass
class MarginalCheck:
    family: str
    projection: str
    statistic: float
    critical: float

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical

    def as_dict(self) -> dict:
        return {"family": self.family, "projection": self.projection, "ks": self.statistic,
                "critical": self.critical, "pass": self.passed}


@dataclass
class MarginalReport:
    signs: tuple[int, ...] | None
    n_samples: int
    checks: list[MarginalCheck]
    invalid_mass: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {"signs": list(self.signs) if self.signs else None, "n_samples": self.n_samples,
                "invalid_mass": self.invalid_mass, "pass": self.passed,
                "checks": [c.as_dict() for c in self.checks]}


def ks_critical(n_samples: int, alpha: float = 0.01) -> float:
    """One-sample two-sided Kolmogorov-Smirnov critical value at level ``alpha``."""
    return float(kstwo.ppf(1.0 - alpha, n_samples))


def ks_statistic(samples: np.ndarray, cdf) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    c = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - c), np.max(c - (i - 1) / n)))


def _family_values(tag: str, positions: np.ndarray, momenta: np.ndarray) -> list[np.ndarray]:
    return [positions[:, d] if t == "x" else momenta[:, d] for d, t in enumerate(tag)]


def _std(cdf_axis_values, dens):
    return float(np.sqrt(np.average((cdf_axis_values - np.average(cdf_axis_values, weights=dens)) ** 2, weights=dens)))


def marginal_checks(reps: ChainRepresentations, positions: np.ndarray, momenta: np.ndarray,
                    alpha: float = 0.01, diagonals: bool = True) -> list[MarginalCheck]:
    """KS checks of every CCS family in the chain against the sample."""
    crit = ks_critical(len(positions), alpha)
    checks = []
    for i, tag in enumerate(reps.chain.tags):
        vals = _family_values(tag, positions, momenta)
        name = f"Omega_{i}({tag})"
        for d, t in enumerate(tag):
            cdf = reps.marginal_cdf(tag, d)
            checks.append(MarginalCheck(name, f"{t}{d + 1}", ks_statistic(vals[d], cdf), crit))
        if diagonals and len(tag) == 2:
            rho = reps.densities[tag]
            ax = reps.axes[tag]
            s = []
            for d in range(2):
                other = 1 - d
                marg = np.trapezoid(rho, dx=ax[other][1] - ax[other][0], axis=other)
                s.append(_std(ax[d], marg))
            for sign, label in ((1.0, "+"), (-1.0, "-")):
                w = (1.0 / s[0], sign / s[1])
                proj = w[0] * vals[0] + w[1] * vals[1]
                checks.append(MarginalCheck(name, f"{tag[0]}1{label}{tag[1]}2",
                                            ks_statistic(proj, reps.projection_cdf(tag, w)), crit))
    return checks


def verify_marginals(mmap: MomentumMap, snapshots, chain: CCSChain | None = None, n_samples: int = 100_000,
                     seed: int = 0, oversample: int | None = None, alpha: float = 0.01,
                     max_invalid_mass: float = 0.01) -> MarginalReport:
    """Sample |psi(x)|^2, push through ``mmap`` and KS-test every CCS marginal."""
    if n_samples < 10_000:
        raise ValueError("marginal verification needs at least 1e4 samples")
    reps = _resolve(snapshots, chain, oversample)
    grid = reps.grid
    rho = reps.state.density()
    invalid_mass = float(np.sum(rho[~mmap.valid]) * grid.cell_volume)
    if invalid_mass > max_invalid_mass:
        raise InvalidMapError(f"{invalid_mass:.3g} of the probability sits on invalid map points")
    tag0 = "x" * grid.ndim
    positions = sample_positions(reps.densities[tag0], list(reps.axes[tag0]), n_samples, seed)
    momenta = mmap.evaluate(positions)
    checks = marginal_checks(reps, positions, momenta, alpha)
    return MarginalReport(mmap.signs, n_samples, checks, invalid_mass)


def closed_form_residual(snapshots, eps: int, oversample: int | None = None) -> tuple[float, MomentumMap]:
    """Max over valid points of |CDF_p(p(x)) - CDF_x(eps x)| for a 1D state.

    For eps = -1 the reflected position CDF is 1 - CDF_x(x).
    """
    reps = _resolve(snapshots, None, oversample)
    if reps.grid.ndim != 1:
        raise ValueError("the closed-form check applies to one-dimensional states")
    mmap = momentum_map(reps, signs=(eps,))
    cdf_p = reps.marginal_cdf("p", 0)(mmap.components[0])
    cdf_x = reps.marginal_cdf("x", 0)(reps.grid.axes[0])
    target = cdf_x if eps == 1 else 1.0 - cdf_x
    diff = np.abs(cdf_p - target)[mmap.valid]
    return (float(diff.max()) if diff.size else float("nan")), mmap
