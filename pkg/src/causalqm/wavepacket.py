"""Wavefunctions on spectral grids: construction, split-step evolution,
mixed position/momentum representations and polar fields.

Units have hbar = 1.  The continuum Fourier convention is

    psi~(p) = (2 pi)^(-1/2) int psi(x) exp(-i p x) dx

on every momentum-tagged axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._numerics import DENSITY_FLOOR, spectral_derivative, wavenumbers


class GridTooSmallError(ValueError):
    """A wavepacket term does not fit inside the grid."""


class AliasingError(ValueError):
    """Time step too large for the kinetic spectrum of the grid."""


class NonFiniteAmplitudeError(FloatingPointError):
    """Evolution produced NaN or infinite amplitudes."""


def _as_tuple(value, n: int, name: str) -> tuple:
    if np.isscalar(value):
        return (value,) * n
    value = tuple(value)
    if len(value) != n:
        raise ValueError(f"{name} needs {n} entries, got {len(value)}")
    return value


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor-product grid; ``upper`` is excluded (periodic spacing)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))
        object.__setattr__(self, "points", tuple(int(v) for v in np.atleast_1d(self.points)))
        n = len(self.lower)
        if n not in (1, 2) or len(self.upper) != n or len(self.points) != n:
            raise ValueError("grid must have 1 or 2 axes with matching bounds and counts")
        for lo, hi, npts in zip(self.lower, self.upper, self.points):
            if not hi > lo:
                raise ValueError(f"upper bound {hi} must exceed lower bound {lo}")
            if npts < 64 or npts & (npts - 1):
                raise ValueError(f"point count {npts} must be a power of two >= 64")

    @classmethod
    def square(cls, lower: float, upper: float, points: int, ndim: int) -> "GridSpec":
        return cls((lower,) * ndim, (upper,) * ndim, (points,) * ndim)

    @property
    def ndim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lower, self.upper, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes(self) -> list[np.ndarray]:
        return [lo + dx * np.arange(n) for lo, dx, n in zip(self.lower, self.spacing, self.points)]

    def momentum_axis(self, axis: int, oversample: int = 1) -> np.ndarray:
        """Ascending momentum samples; ``oversample`` refines the spacing."""
        n = self.points[axis] * oversample
        dp = 2.0 * np.pi / (n * self.spacing[axis])
        return dp * (np.arange(n) - n // 2)

    def position_axis(self, axis: int, oversample: int = 1) -> np.ndarray:
        n = self.points[axis] * oversample
        return self.lower[axis] + (self.spacing[axis] / oversample) * np.arange(n)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        ok = np.ones(points.shape[0], dtype=bool)
        for d, ax in enumerate(self.axes):
            ok &= (points[:, d] >= ax[0]) & (points[:, d] <= ax[-1])
        return ok


@dataclass(frozen=True)
class GaussianTerm:
    """exp(-(x-c)^T S^-1 (x-c)/4 + i k.x) so that |psi|^2 has covariance S."""

    center: tuple[float, ...]
    sigma: tuple[float, ...]
    k: tuple[float, ...]
    correlation: float = 0.0
    coefficient: complex = 1.0

    @property
    def ndim(self) -> int:
        return len(self.center)

    def covariance(self) -> np.ndarray:
        s = np.asarray(self.sigma, dtype=float)
        cov = np.diag(s ** 2)
        if self.ndim == 2:
            cov[0, 1] = cov[1, 0] = self.correlation * s[0] * s[1]
        return cov


@dataclass(frozen=True)
class WavefunctionSpec:
    """Catalog state: one gaussian or a superposition of gaussian terms."""

    kind: str
    terms: tuple[GaussianTerm, ...]

    def __post_init__(self):
        if self.kind not in ("gaussian", "superposition"):
            raise ValueError(f"unknown wavefunction kind {self.kind!r}")
        if not self.terms:
            raise ValueError("at least one term is required")
        n = self.terms[0].ndim
        for term in self.terms:
            if term.ndim != n or len(term.sigma) != n or len(term.k) != n:
                raise ValueError("all terms need the same dimension")
            if any(s <= 0 for s in term.sigma):
                raise ValueError("widths sigma must be positive")
            if not abs(term.correlation) < 1:
                raise ValueError("|correlation| must be below 1")
        if all(term.coefficient == 0 for term in self.terms):
            raise ValueError("at least one coefficient must be nonzero")

    @classmethod
    def gaussian(cls, center=0.0, sigma=1.0, k=0.0, correlation=0.0, ndim: int = 1) -> "WavefunctionSpec":
        term = GaussianTerm(
            center=tuple(float(v) for v in _as_tuple(center, ndim, "center")),
            sigma=tuple(float(v) for v in _as_tuple(sigma, ndim, "sigma")),
            k=tuple(float(v) for v in _as_tuple(k, ndim, "k")),
            correlation=float(correlation),
        )
        return cls("gaussian", (term,))

    @classmethod
    def superposition(cls, terms: Sequence[GaussianTerm]) -> "WavefunctionSpec":
        return cls("superposition", tuple(terms))

    @property
    def ndim(self) -> int:
        return self.terms[0].ndim


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "free"
    masses: tuple[float, ...] = (1.0,)
    omega: tuple[float, ...] | None = None
    table: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in np.atleast_1d(self.masses)))
        if self.kind not in ("free", "harmonic", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if any(m <= 0 for m in self.masses):
            raise ValueError("masses must be positive")
        if self.kind == "harmonic":
            if self.omega is None:
                raise ValueError("harmonic potential needs omega")
            object.__setattr__(self, "omega", tuple(float(w) for w in np.atleast_1d(self.omega)))
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated potential needs a table")

    def masses_for(self, ndim: int) -> np.ndarray:
        return np.asarray(_as_tuple(self.masses if len(self.masses) > 1 else self.masses[0], ndim, "masses"), dtype=float)

    def values(self, grid: GridSpec) -> np.ndarray:
        if self.kind == "free":
            return np.zeros(grid.shape)
        if self.kind == "harmonic":
            m = self.masses_for(grid.ndim)
            w = np.asarray(_as_tuple(self.omega if len(self.omega) > 1 else self.omega[0], grid.ndim, "omega"))
            return sum(0.5 * m[d] * w[d] ** 2 * x ** 2 for d, x in enumerate(grid.mesh()))
        table = np.asarray(self.table, dtype=float)
        if table.shape != grid.shape:
            raise ValueError(f"potential table shape {table.shape} != grid {grid.shape}")
        return table


@dataclass(frozen=True)
class WavefunctionState:
    grid: GridSpec
    amplitudes: np.ndarray = field(compare=False)
    time: float = 0.0

    def norm(self) -> float:
        # periodic trapezoid rule: the frame values vanish for admissible states
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.cell_volume)

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def valid_mask(self) -> np.ndarray:
        rho = self.density()
        return rho > DENSITY_FLOOR * rho.max()


@dataclass(frozen=True)
class MixedState:
    """Amplitudes with each axis in position ('x') or momentum ('p') form."""

    rep: tuple[str, ...]
    axes: tuple[np.ndarray, ...] = field(compare=False)
    amplitudes: np.ndarray = field(compare=False)
    time: float = 0.0

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * np.prod(self.spacing))


@dataclass(frozen=True)
class PolarFields:
    R: np.ndarray
    grad_s: np.ndarray
    valid: np.ndarray


def _check_fits(spec: WavefunctionSpec, grid: GridSpec):
    if spec.ndim != grid.ndim:
        raise ValueError(f"state has {spec.ndim} axes but grid has {grid.ndim}")
    for term in spec.terms:
        for d in range(grid.ndim):
            c, s = term.center[d], term.sigma[d]
            if c - 4 * s < grid.lower[d] or c + 4 * s > grid.upper[d]:
                raise GridTooSmallError(
                    f"term centered at {c} with sigma {s} leaves axis {d} range "
                    f"[{grid.lower[d]}, {grid.upper[d]}]"
                )


def _free_gaussian_term(term: GaussianTerm, grid: GridSpec, masses: np.ndarray, t: float) -> np.ndarray:
    n = grid.ndim
    M0 = np.linalg.inv(term.covariance()) / 2.0
    minv = np.diag(1.0 / masses)
    Mt = np.linalg.inv(np.linalg.inv(M0) + 1j * t * minv)
    k = np.asarray(term.k, dtype=float)
    vel = k / masses
    lam = np.linalg.eigvals(M0 @ minv)
    prefactor = np.prod(1.0 / np.sqrt(1.0 + 1j * t * lam))
    # normalization of |psi|^2 = N(center, S)
    amp = (2 * np.pi) ** (-n / 4) * np.linalg.det(term.covariance()) ** (-0.25)
    X = grid.mesh()
    y = [X[d] - term.center[d] - vel[d] * t for d in range(n)]
    quad = sum(Mt[a, b] * y[a] * y[b] for a in range(n) for b in range(n))
    phase = sum(k[d] * X[d] for d in range(n)) - t * float(np.sum(k ** 2 / (2 * masses)))
    return amp * prefactor * np.exp(-0.5 * quad + 1j * phase)


def _normalized(grid: GridSpec, psi: np.ndarray, t: float) -> WavefunctionState:
    norm = np.sum(np.abs(psi) ** 2) * grid.cell_volume
    return WavefunctionState(grid, psi / np.sqrt(norm), float(t))


def analytic_free_gaussian(spec: WavefunctionSpec, grid: GridSpec, masses=1.0, t: float = 0.0) -> WavefunctionState:
    """Closed-form free evolution of a gaussian (or superposition) to time ``t``."""
    _check_fits(spec, grid)
    m = np.asarray(_as_tuple(masses, grid.ndim, "masses"), dtype=float)
    psi = sum(term.coefficient * _free_gaussian_term(term, grid, m, t) for term in spec.terms)
    return _normalized(grid, psi, t)


def build_state(spec: WavefunctionSpec, grid: GridSpec) -> WavefunctionState:
    """Evaluate a catalog state on ``grid`` and renormalize on-grid."""
    return analytic_free_gaussian(spec, grid, 1.0, 0.0)


def _kinetic(grid: GridSpec, masses: np.ndarray) -> np.ndarray:
    ks = [wavenumbers(n, dx) for n, dx in zip(grid.points, grid.spacing)]
    K = np.meshgrid(*ks, indexing="ij")
    return sum(K[d] ** 2 / (2 * masses[d]) for d in range(grid.ndim))


def evolve(state: WavefunctionState, potential: PotentialSpec, dt: float, steps: int) -> list[WavefunctionState]:
    """Strang split-step propagation; returns ``steps + 1`` snapshots."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    masses = potential.masses_for(grid.ndim)
    T = _kinetic(grid, masses)
    if dt * T.max() >= np.pi:
        raise AliasingError(
            f"dt={dt} times the largest kinetic eigenvalue {T.max():.4g} exceeds pi"
        )
    U = potential.values(grid)
    half_v = np.exp(-0.5j * dt * U)
    kin = np.exp(-1j * dt * T)
    axes = tuple(range(grid.ndim))
    out = [state]
    psi = state.amplitudes
    for step in range(1, steps + 1):
        psi = half_v * np.fft.ifftn(kin * np.fft.fftn(half_v * psi, axes=axes), axes=axes)
        if not np.all(np.isfinite(psi)):
            raise NonFiniteAmplitudeError(f"non-finite amplitude at step {step}")
        nxt = _normalized(grid, psi, state.time + step * dt)
        psi = nxt.amplitudes
        out.append(nxt)
    return out


def _parse_rep(rep, ndim: int) -> tuple[str, ...]:
    if isinstance(rep, str):
        rep = tuple(rep)
    rep = tuple({"position": "x", "momentum": "p"}.get(r, r) for r in rep)
    if len(rep) != ndim or any(r not in ("x", "p") for r in rep):
        raise ValueError(f"representation {rep!r} invalid for {ndim} axes")
    return rep


def _refine_position(psi: np.ndarray, axis: int, factor: int) -> np.ndarray:
    """Trigonometric interpolation onto a grid ``factor`` times finer."""
    n = psi.shape[axis]
    spec = np.fft.fft(psi, axis=axis)
    spec = np.moveaxis(spec, axis, 0)
    big = np.zeros((n * factor,) + spec.shape[1:], dtype=complex)
    half = n // 2
    big[:half] = spec[:half]
    big[-half + 1:] = spec[half + 1:]
    # split the Nyquist bin symmetrically
    big[half] = 0.5 * spec[half]
    big[-half] = 0.5 * spec[half]
    out = np.fft.ifft(big, axis=0) * factor
    return np.moveaxis(out, 0, axis)


def _to_momentum(psi: np.ndarray, axis: int, lower: float, dx: float, factor: int) -> tuple[np.ndarray, np.ndarray]:
    n = psi.shape[axis]
    m = n * factor
    spec = np.fft.fft(psi, n=m, axis=axis)
    spec = np.fft.fftshift(spec, axes=axis)
    dp = 2 * np.pi / (m * dx)
    p = dp * (np.arange(m) - m // 2)
    shape = [1] * psi.ndim
    shape[axis] = m
    spec = spec * (dx / np.sqrt(2 * np.pi)) * np.exp(-1j * p * lower).reshape(shape)
    return spec, p


def to_mixed_representation(state: WavefunctionState, rep, oversample: int = 1) -> MixedState:
    """Fourier transform the momentum-tagged axes.

    With ``oversample > 1`` momentum axes are zero-padded (finer momentum
    sampling of the same continuum transform) and position axes are
    spectrally interpolated onto a finer grid.
    """
    grid = state.grid
    rep = _parse_rep(rep, grid.ndim)
    if oversample == 1 and all(r == "x" for r in rep):
        return MixedState(rep, tuple(grid.axes), state.amplitudes, state.time)
    psi = state.amplitudes
    axes = []
    for d, r in enumerate(rep):
        if r == "p":
            psi, p = _to_momentum(psi, d, grid.lower[d], grid.spacing[d], oversample)
            axes.append(p)
        else:
            if oversample > 1:
                psi = _refine_position(psi, d, oversample)
            axes.append(grid.position_axis(d, oversample))
    return MixedState(rep, tuple(axes), psi, state.time)


def from_mixed_representation(mixed: MixedState, grid: GridSpec) -> WavefunctionState:
    """Inverse of :func:`to_mixed_representation` for ``oversample=1``."""
    psi = mixed.amplitudes
    for d, r in enumerate(mixed.rep):
        if r != "p":
            continue
        n = grid.points[d]
        if psi.shape[d] != n:
            raise ValueError("only non-oversampled representations can be inverted")
        p = grid.momentum_axis(d)
        shape = [1] * psi.ndim
        shape[d] = n
        dx = grid.spacing[d]
        spec = psi * np.exp(1j * p * grid.lower[d]).reshape(shape) * (np.sqrt(2 * np.pi) / dx)
        psi = np.fft.ifft(np.fft.ifftshift(spec, axes=d), axis=d)
    return WavefunctionState(grid, psi, mixed.time)


def density(mixed: MixedState) -> np.ndarray:
    return np.abs(mixed.amplitudes) ** 2


def gradient(state: WavefunctionState) -> np.ndarray:
    """Spectral gradient of the amplitudes, shape ``(n, *grid)``."""
    g = state.grid
    return np.stack([spectral_derivative(state.amplitudes, g.spacing[d], d) for d in range(g.ndim)])


def polar_decompose(state: WavefunctionState) -> PolarFields:
    """R = |psi| and grad S = Im(psi* grad psi)/|psi|^2 without unwrapping S."""
    psi = state.amplitudes
    rho = np.abs(psi) ** 2
    valid = rho > DENSITY_FLOOR * rho.max()
    flux = np.imag(np.conj(psi)[None] * gradient(state))
    grad_s = np.divide(flux, rho[None], out=np.zeros_like(flux), where=valid[None])
    return PolarFields(np.sqrt(rho), grad_s, valid)
