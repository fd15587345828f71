"""Per-time field pipeline: evolve a state, build momentum maps, structure
tensors, W and the assembled velocity at every stored snapshot."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .causal_hamiltonian import (CausalHamiltonianFields, HcGradient, HcIntegral, causal_hamiltonian)
from .marginal_chain import CCSChain, MomentumMap, build_chain, chain_representations, dbb_momentum_map, momentum_map
from .units import Scales, state_scales
from .velocity_solver import (AntisymmetricField, ClosedCharacteristicWarning, CurrentField, Gauge, ResidualSummary,
                              StructureTensors, VelocityField, assemble_velocity, condition_W, continuity_residual, dbb_velocity,
                              f_tensor, F_tensor, integrability_residual, probability_current, solve_W)
from .wavepacket import PotentialSpec, WavefunctionState, evolve


@dataclass(frozen=True)
class PipelineOptions:
    """``mode`` is "cdf" (chain map) or "dbb" (p = grad S)."""

    variant: int = 1
    signs: tuple[int, ...] | None = None
    oversample: int | None = None
    mode: str = "cdf"
    method: str = "least_squares"
    gauge: Gauge = field(default_factory=Gauge)
    tail_weight: float = 1.0
    condition: bool = True
    solve_w: bool = True

    def __post_init__(self):
        if self.mode not in ("cdf", "dbb"):
            raise ValueError(f"unknown map mode {self.mode!r}")
        if self.method not in ("least_squares", "characteristics"):
            raise ValueError(f"unknown W solver {self.method!r}")


@dataclass
class FieldSlice:
    state: WavefunctionState
    map: MomentumMap
    current: CurrentField
    v_b: VelocityField
    v: VelocityField
    tensors: StructureTensors | None = None
    W: AntisymmetricField | None = None

    @property
    def time(self) -> float:
        return self.state.time

    @property
    def rho(self) -> np.ndarray:
        return self.state.density()


@dataclass
class FieldSeries:
    slices: list[FieldSlice]
    masses: np.ndarray
    options: PipelineOptions
    scales: Scales

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.slices])

    @property
    def dt(self) -> float:
        t = self.times
        return float(t[1] - t[0]) if len(t) > 1 else 0.0

    @property
    def velocities(self) -> list[VelocityField]:
        return [s.v for s in self.slices]

    @property
    def dbb_velocities(self) -> list[VelocityField]:
        return [s.v_b for s in self.slices]

    @property
    def maps(self) -> list[MomentumMap]:
        return [s.map for s in self.slices]

    def neighbours(self, k: int) -> tuple[list[int], int]:
        """Three slice indices around ``k`` and the position of ``k`` in them."""
        n = len(self.slices)
        if n < 3:
            raise ValueError("at least three snapshots are needed for time derivatives")
        if k == 0:
            return [0, 1, 2], 0
        if k == n - 1:
            return [n - 3, n - 2, n - 1], 2
        return [k - 1, k, k + 1], 1

    def hamiltonian(self, k: int, curl_scale: float | None = None
                    ) -> tuple[CausalHamiltonianFields, HcGradient, HcIntegral]:
        idx, at = self.neighbours(k)
        s = self.slices[k]
        region = s.tensors.region if s.tensors is not None else None
        scale = curl_scale if curl_scale is not None else self.scales.F_tensor
        return causal_hamiltonian([self.slices[i].map for i in idx], s.v, self.masses, s.rho, at, region, scale)

    def residuals(self, k: int) -> dict:
        """Scaled continuity, integrability and W-equation residual summaries."""
        s = self.slices[k]
        sc = self.scales
        out = {"time": s.time}
        _, base = continuity_residual(s.v_b, s.rho, s.current)
        _, full = continuity_residual(s.v, s.rho, s.current)
        out["continuity"] = {"dbb": _scaled(base, sc.continuity), "assembled": _scaled(full, sc.continuity)}
        if s.tensors is not None and s.tensors.F12 is not None:
            idx, at = self.neighbours(k)
            tens = [self.slices[i].tensors for i in idx]
            _, ib = integrability_residual(s.v_b, tens, at)
            _, ia = integrability_residual(s.v, tens, at)
            out["integrability"] = {"dbb": _scaled(ib, sc.F_tensor), "assembled": _scaled(ia, sc.F_tensor)}
        if s.W is not None:
            out["w_equation"] = {"zero": _scaled(s.W.baseline, sc.F_tensor),
                                 "solved": _scaled(s.W.residual, sc.F_tensor),
                                 "reduction": s.W.reduction,
                                 "W_max": float(np.abs(s.W.W12).max() / sc.W_tensor)}
        return out


def _scaled(summary: ResidualSummary, scale: float) -> dict:
    return {"max": summary.max / scale, "rms": summary.rms / scale, "points": summary.points}


def evolve_snapshots(state: WavefunctionState, potential: PotentialSpec, dt: float, steps: int,
                     stride: int = 1) -> list[WavefunctionState]:
    """Evolve ``steps`` steps of ``dt`` and keep every ``stride``-th state."""
    if stride < 1 or steps % stride:
        raise ValueError(f"steps ({steps}) must be a positive multiple of stride ({stride})")
    return evolve(state, potential, dt, steps)[::stride]


def field_series(states: list[WavefunctionState], masses, options: PipelineOptions | None = None) -> FieldSeries:
    """Maps, currents, tensors, W and assembled velocities for equally spaced states."""
    options = options or PipelineOptions()
    states = list(states)
    if not states:
        raise ValueError("no states given")
    grid = states[0].grid
    n = grid.ndim
    m = np.broadcast_to(np.asarray(masses, dtype=float), (n,)).copy()
    chain: CCSChain = build_chain(n, options.variant)
    slices = []
    for st in states:
        if options.mode == "dbb":
            mmap = dbb_momentum_map(st)
        else:
            reps = chain_representations(st, chain, options.oversample)
            mmap = momentum_map(reps, signs=options.signs)
        cur = probability_current(st, m)
        vb = dbb_velocity(cur, st.density())
        slices.append(FieldSlice(st, mmap, cur, vb, assemble_velocity(vb, None, st.density())))
    series = FieldSeries(slices, m, options, state_scales(states[len(states) // 2], m))
    if n == 1 or len(slices) < 3:
        return series
    for s in slices:
        s.tensors = f_tensor(s.map, s.rho)
    Fs = []
    for k, s in enumerate(slices):
        idx, at = series.neighbours(k)
        Fs.append(F_tensor([slices[i].tensors for i in idx], s.v_b, at))
    for s, tens in zip(slices, Fs):
        s.tensors = tens
    if not options.solve_w:
        return series
    for s in slices:
        sc = state_scales(s.state, m)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ClosedCharacteristicWarning)
            s.W = solve_W(s.tensors, s.rho, options.gauge, options.method, tail_weight=options.tail_weight,
                          grad_scale=sc.f_tensor / (sc.density * sc.length))
        if options.condition:
            s.W = condition_W(s.W, s.tensors, s.rho)
        s.v = assemble_velocity(s.v_b, s.W, s.rho)
    return series
