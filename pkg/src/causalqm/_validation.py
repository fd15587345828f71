"""Input validation for the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .wavepacket import WavefunctionState


def check_state(X) -> WavefunctionState:
    if not isinstance(X, WavefunctionState):
        raise TypeError(f"expected a WavefunctionState, got {type(X).__name__}")
    if not np.all(np.isfinite(X.amplitudes)):
        raise ValueError("state amplitudes are not finite")
    return X


def check_states(X, minimum: int = 1) -> list[WavefunctionState]:
    """A non-empty sequence of states on one grid, equally spaced in time."""
    if isinstance(X, WavefunctionState):
        X = [X]
    states = [check_state(s) for s in X]
    if len(states) < minimum:
        raise ValueError(f"at least {minimum} states are required, got {len(states)}")
    grid = states[0].grid
    if any(s.grid != grid for s in states):
        raise ValueError("states live on different grids")
    if len(states) > 1:
        steps = np.diff([s.time for s in states])
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(1.0, steps.max()):
            raise ValueError("states must be equally spaced in increasing time")
    return states


def check_points(X, ndim: int) -> np.ndarray:
    """(N, ndim) finite float array; a 1D array is read as N points when ndim = 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and ndim == 1:
        X = X[:, None]
    X = check_array(X, dtype=float, ensure_all_finite=True)
    if X.shape[1] != ndim:
        raise ValueError(f"expected {ndim} coordinate columns, got {X.shape[1]}")
    return X


def check_masses(masses, ndim: int) -> np.ndarray:
    m = np.broadcast_to(np.asarray(masses, dtype=float), (ndim,)).copy()
    if not np.all(np.isfinite(m) & (m > 0)):
        raise ValueError("masses must be positive and finite")
    return m
