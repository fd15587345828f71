"""Causal phase-space flows for Schroedinger wavefunctions: momentum maps from
chained conditional CDFs, W-corrected velocities, a causal Hamiltonian and
ensemble trajectories."""

from .causal_hamiltonian import causal_hamiltonian, dbb_hamiltonian, evaluate_hamiltonian
from .config import ConfigError, RunConfig, load_config
from .estimators import MomentumMapEstimator, TrajectoryEstimator, VelocityFieldEstimator
from .marginal_chain import build_chain, momentum_map, sign_branches, verify_marginals
from .pipeline import PipelineOptions, field_series
from .trajectories import dbb_propagate, equivariance_test, propagate
from .velocity_solver import assemble_velocity, solve_W
from .wavepacket import GridSpec, PotentialSpec, WavefunctionSpec, build_state, evolve

__all__ = [
    "ConfigError", "GridSpec", "MomentumMapEstimator", "PipelineOptions", "PotentialSpec", "RunConfig",
    "TrajectoryEstimator", "VelocityFieldEstimator", "WavefunctionSpec", "assemble_velocity", "build_chain",
    "build_state", "causal_hamiltonian", "dbb_hamiltonian", "dbb_propagate", "equivariance_test",
    "evaluate_hamiltonian", "evolve", "field_series", "load_config", "momentum_map", "propagate",
    "sign_branches", "solve_W", "verify_marginals",
]
__version__ = "0.1.0"
