"""Shared numerical kernels: spectral and centered derivatives, interpolation,
piecewise-linear CDFs and monotone inversion."""

from __future__ import annotations

import numpy as np

#: relative density floor; points below ``DENSITY_FLOOR * max`` are invalid
DENSITY_FLOOR = 1e-12


def wavenumbers(n: int, dx: float) -> np.ndarray:
    """Angular wavenumbers in FFT order."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=dx)


def spectral_derivative(f: np.ndarray, dx: float, axis: int, order: int = 1) -> np.ndarray:
    """Spectral derivative of a (periodically extended) grid function."""
    n = f.shape[axis]
    k = wavenumbers(n, dx)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        # odd derivatives of the Nyquist mode are not representable
        mult[n // 2] = 0.0
    shape = [1] * f.ndim
    shape[axis] = n
    out = np.fft.ifft(np.fft.fft(f, axis=axis) * mult.reshape(shape), axis=axis)
    if np.isrealobj(f):
        return out.real
    return out


def centered_gradient(f: np.ndarray, dx: float, axis: int) -> np.ndarray:
    """Second-order centered difference; second-order one-sided at the frame."""
    return np.gradient(f, dx, axis=axis, edge_order=2)


def erode(mask: np.ndarray, width: int = 1) -> np.ndarray:
    """Shrink a boolean mask so every kept point has a full centered stencil."""
    out = mask.copy()
    for _ in range(width):
        nxt = out.copy()
        for ax in range(out.ndim):
            nxt[tuple(_edge(out.ndim, ax, 0))] = False
            nxt[tuple(_edge(out.ndim, ax, -1))] = False
            nxt &= np.roll(out, 1, axis=ax) & np.roll(out, -1, axis=ax)
        out = nxt
    return out


def _edge(ndim: int, axis: int, index: int) -> list:
    sl = [slice(None)] * ndim
    sl[axis] = index
    return sl


def linear_interp_uniform(values: np.ndarray, x0: float, h: float, x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Linear interpolation along ``axis`` of a uniformly sampled table.

    ``values`` has shape ``(m, ...)`` after moving ``axis`` to the front and
    ``x`` must broadcast against the trailing shape.  Queries are clamped to
    the table range.
    """
    v = np.moveaxis(values, axis, 0)
    m = v.shape[0]
    s = np.clip((np.asarray(x, dtype=float) - x0) / h, 0.0, m - 1.0)
    i0 = np.minimum(np.floor(s).astype(np.intp), m - 2) if m > 1 else np.zeros_like(s, dtype=np.intp)
    w = s - i0
    trailing = v.shape[1:]
    idx = np.indices(np.broadcast_shapes(trailing, np.shape(x)))
    if m == 1:
        return v[(np.zeros_like(i0),) + tuple(idx)]
    lo = v[(i0,) + tuple(idx)]
    hi = v[(i0 + 1,) + tuple(idx)]
    return (1.0 - w) * lo + w * hi


def interp_grid(field: np.ndarray, axes: list[np.ndarray], points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``field`` (1-D or 2-D) at ``points`` (N, n).

    Points outside the grid are clamped to the frame.
    """
    points = np.atleast_2d(points)
    n = len(axes)
    idx = []
    wts = []
    for d in range(n):
        ax = axes[d]
        h = ax[1] - ax[0]
        s = np.clip((points[:, d] - ax[0]) / h, 0.0, len(ax) - 1.0)
        i0 = np.minimum(np.floor(s).astype(np.intp), len(ax) - 2)
        idx.append(i0)
        wts.append(s - i0)
    if n == 1:
        i, w = idx[0], wts[0]
        return (1.0 - w) * field[i] + w * field[i + 1]
    i, j = idx
    u, v = wts
    return ((1 - u) * (1 - v) * field[i, j] + u * (1 - v) * field[i + 1, j]
            + (1 - u) * v * field[i, j + 1] + u * v * field[i + 1, j + 1])


def trapezoid_cumulative(f: np.ndarray, h: float, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """Left and right trapezoid cumulative integrals along ``axis``.

    Returns ``(left, right)`` where ``left[k] = int_{x_0}^{x_k}`` and
    ``right[k] = int_{x_k}^{x_end}``; the right tail is accumulated from the
    right so small upper-tail masses keep full relative precision.
    """
    f = np.moveaxis(f, axis, -1)
    cell = 0.5 * h * (f[..., 1:] + f[..., :-1])
    zeros = np.zeros(f.shape[:-1] + (1,))
    left = np.concatenate([zeros, np.cumsum(cell, axis=-1)], axis=-1)
    right = np.concatenate([np.cumsum(cell[..., ::-1], axis=-1)[..., ::-1], zeros], axis=-1)
    return np.moveaxis(left, -1, axis), np.moveaxis(right, -1, axis)


def leftmost_inverse(table: np.ndarray, xs: np.ndarray, u: np.ndarray,
                     dens: np.ndarray | None = None) -> np.ndarray:
    """Invert nondecreasing rows of ``table`` by monotone interpolation.

    ``table`` has shape ``(m, L)`` and ``u`` shape ``(m, K)``; row ``r`` of the
    result holds the leftmost ``x`` with ``table[r](x) = u[r]``.  Queries
    outside a row's range clamp to the end abscissae.  Without ``dens`` the
    table is interpolated linearly; with the node densities ``dens`` (same
    shape as ``table``) each cell is inverted as the exact cumulative of the
    linear density between its nodes.
    """
    table = np.atleast_2d(table)
    u = np.atleast_2d(u)
    m, L = table.shape
    lo = table[:, :1]
    span = np.maximum(table[:, -1:] - lo, 1e-300)
    # row offsets make one flat searchsorted do all rows at once
    tn = (table - lo) / span
    un = np.clip((u - lo) / span, 0.0, 1.0)
    offs = 2.0 * np.arange(m)[:, None]
    flat = (tn + offs).ravel()
    pos = np.searchsorted(flat, (un + offs).ravel(), side="left").reshape(u.shape)
    k = pos - (np.arange(m) * L)[:, None]
    k = np.clip(k, 1, L - 1)
    rows = np.arange(m)[:, None]
    c0 = tn[rows, k - 1]
    c1 = tn[rows, k]
    denom = c1 - c0
    t = np.where(denom > 0, (un - c0) / np.where(denom > 0, denom, 1.0), 1.0)
    t = np.clip(t, 0.0, 1.0)
    if dens is not None:
        dens = np.atleast_2d(dens)
        t = sample_linear_cell(dens[rows, k - 1], dens[rows, k], t)
    out = xs[k - 1] + t * (xs[k] - xs[k - 1])
    out = np.where(un <= 0.0, xs[0], out)
    return out


class PiecewiseLinearCDF:
    """Exact CDF (and sampler) of the piecewise-linear interpolant of a sampled density."""

    def __init__(self, x: np.ndarray, density: np.ndarray):
        self.x = np.asarray(x, dtype=float)
        self.f = np.clip(np.asarray(density, dtype=float), 0.0, None)
        self.h = self.x[1] - self.x[0]
        cells = 0.5 * self.h * (self.f[1:] + self.f[:-1])
        self.total = cells.sum()
        self.cum = np.concatenate([[0.0], np.cumsum(cells)]) / self.total

    def __call__(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        s = np.clip((q - self.x[0]) / self.h, 0.0, len(self.x) - 1.0)
        k = np.minimum(np.floor(s).astype(np.intp), len(self.x) - 2)
        t = s - k
        a = self.f[k]
        b = self.f[k + 1]
        part = self.h * (a * t + 0.5 * (b - a) * t * t) / self.total
        return self.cum[k] + part

    def sample(self, u_cell: np.ndarray, u_in: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.cum, u_cell, side="right") - 1
        k = np.clip(k, 0, len(self.x) - 2)
        return self.x[k] + self.h * sample_linear_cell(self.f[k], self.f[k + 1], u_in)


def sample_linear_cell(a: np.ndarray, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse CDF on [0, 1] of the density proportional to ``(1-t) a + t b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    tot = a + 0.5 * d
    safe = np.abs(d) > 1e-12 * np.maximum(np.abs(a) + np.abs(b), 1e-300)
    # a t + d t^2 / 2 = u * tot, stable root
    disc = np.sqrt(np.maximum(a * a + 2.0 * d * u * tot, 0.0))
    root = np.where(safe, 2.0 * u * tot / np.where(a + disc > 0, a + disc, 1.0), u)
    return np.clip(root, 0.0, 1.0)


#: map-derived fields (f, F, g) are resolved only above this relative density
RESOLVED_FLOOR = 1e-6


def resolved_mask(rho: np.ndarray, valid: np.ndarray | None = None, width: int = 1) -> np.ndarray:
    """Points with density above ``RESOLVED_FLOOR * max`` and a full stencil."""
    mask = rho > RESOLVED_FLOOR * rho.max()
    if valid is not None:
        mask &= valid
    return erode(mask, width)


def time_derivative(values, times, at: int = 1) -> np.ndarray:
    """Second-order derivative at ``times[at]`` from three equally spaced slices."""
    if len(values) != 3 or len(times) != 3:
        raise ValueError("three time slices are required")
    dt0, dt1 = times[1] - times[0], times[2] - times[1]
    if dt0 <= 0 or abs(dt1 - dt0) > 1e-9 * max(abs(dt0), 1.0):
        raise ValueError(f"time slices must be equally spaced, got steps {dt0} and {dt1}")
    a, b, c = values
    if at == 1:
        return (c - a) / (2 * dt0)
    if at == 0:
        return (-3 * a + 4 * b - c) / (2 * dt0)
    if at == 2:
        return (a - 4 * b + 3 * c) / (2 * dt0)
    raise ValueError("at must be 0, 1 or 2")


def centered_gradient4(f: np.ndarray, dx: float, axis: int) -> np.ndarray:
    """Fourth-order centered difference; second-order near the frame."""
    out = centered_gradient(f, dx, axis)
    f = np.moveaxis(f, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * dx)
    return out
