"""Characteristic scales of a state, used to express tolerances in scaled units.

With hbar = 1 every derived quantity is measured against the state's own
length, momentum and mass scales, so "1e-3 scaled" means 1e-3 of the natural
magnitude of that quantity for the fixture at hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .wavepacket import WavefunctionState, to_mixed_representation


@dataclass(frozen=True)
class Scales:
    length: float
    momentum: float
    mass: float
    density: float

    @property
    def velocity(self) -> float:
        return self.momentum / self.mass

    @property
    def time(self) -> float:
        return self.length / self.velocity

    @property
    def energy(self) -> float:
        return self.momentum ** 2 / self.mass

    @property
    def f_tensor(self) -> float:
        """Units of d_i p_j."""
        return self.momentum / self.length

    @property
    def F_tensor(self) -> float:
        """Units of d_t f_ij, also the curl of the Hamiltonian gradient."""
        return self.f_tensor / self.time

    @property
    def W_tensor(self) -> float:
        """Units of W: density times velocity times length."""
        return self.density * self.velocity * self.length

    @property
    def continuity(self) -> float:
        """Units of div(rho v)."""
        return self.density * self.velocity / self.length

    def as_dict(self) -> dict:
        return {"length": self.length, "momentum": self.momentum, "mass": self.mass,
                "density": self.density}


def state_scales(state: WavefunctionState, masses) -> Scales:
    """Length = rms position spread, momentum = rms momentum, both averaged
    over axes; mass = mean mass; density = peak |psi|^2."""
    grid = state.grid
    rho = state.density()
    w = rho / rho.sum()
    var = []
    for x in grid.mesh():
        mean = float(np.sum(w * x))
        var.append(float(np.sum(w * (x - mean) ** 2)))
    mixed = to_mixed_representation(state, "p" * grid.ndim)
    prho = np.abs(mixed.amplitudes) ** 2
    pw = prho / prho.sum()
    pmesh = np.meshgrid(*mixed.axes, indexing="ij")
    p2 = [float(np.sum(pw * p ** 2)) for p in pmesh]
    m = float(np.mean(np.broadcast_to(np.asarray(masses, dtype=float), (grid.ndim,))))
    return Scales(float(np.sqrt(np.mean(var))), float(np.sqrt(np.mean(p2))), m, float(rho.max()))
